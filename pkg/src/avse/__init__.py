"""Audio-visual speech enhancement toolkit.

Modules: signal_io (WAV/STFT), filterbank (mel filters + inverse lift),
enhancers (Wiener filter and baselines), regressor (contextual feature
regression), corpus (mixing, splits, synthetic data, AVF1 files),
metrics (segmental SNR / LSD), and cli (batch front end).
"""

__version__ = "0.1.0"
