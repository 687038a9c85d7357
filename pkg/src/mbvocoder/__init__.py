"""Multi-band GAN singing-voice vocoder.

Two WaveNet sub-generators synthesize PQMF sub-bands from log-mel spectrograms;
an unconditional and a singer-conditioned discriminator drive LSGAN training
alongside multi-resolution STFT and singer perceptual losses.
"""

from .config import RunConfig, load_config, smoke_config
from .dsp import AudioSignal, mel_spectrogram, pqmf_analysis, pqmf_synthesis
from .model import MultiBandGenerator, SingerConditionalDiscriminator, UnconditionalDiscriminator
from .speaker_encoder import SpeakerEncoder, ge2e_loss

__version__ = "0.1.0"

__all__ = [
    "AudioSignal",
    "MultiBandGenerator",
    "RunConfig",
    "SingerConditionalDiscriminator",
    "SpeakerEncoder",
    "UnconditionalDiscriminator",
    "ge2e_loss",
    "load_config",
    "mel_spectrogram",
    "pqmf_analysis",
    "pqmf_synthesis",
    "smoke_config",
]
