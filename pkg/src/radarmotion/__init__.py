"""Stochastic human-motion forecasting from simulated mmWave radar point clouds.

The package covers a float64 autodiff core, a DCT motion codec, a radar point
cloud simulator, windowed dataset construction, radar-derived conditioning, a
skeleton/frequency transformer noise predictor, frequency-domain diffusion with
history inpainting, evaluation metrics, and a cached command-line pipeline.
"""
__version__ = "0.1.0"
