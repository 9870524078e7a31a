"""Blind deblurring by sampling blur kernels with a guided diffusion model.

Modules: ``toy1d`` (1D pulse problem), ``blur`` (forward model and kernels),
``nonblind`` (Wiener solver and reblurring loss), ``diffusion`` (schedule,
guided sampler, refinement), ``denoiser`` (kernel noise predictor and its
training), ``metrics`` and ``cli``.
"""
