"""Genre-conditional music spectrogram generation toolkit.

Two generative models over Mel spectrograms (an autoregressive
time/frequency recurrent model and a fully convolutional conditional GAN)
with the full supporting pipeline: Mel DSP and Griffin-Lim inversion, corpus
manifests and batching, a minimal differentiable tensor core with activation
checkpointing, training loops, and a CLI (``melgen``).
"""

__version__ = "0.1.0"

from . import cmelgan, config, data, dsp, melnet, nn, training, wavio  # noqa: E402,F401
from .dsp import MelSpectrogram, SpectroParams, Waveform  # noqa: E402,F401
