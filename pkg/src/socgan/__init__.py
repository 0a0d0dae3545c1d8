"""Multi-channel social trajectory prediction with an LSTM-GAN and an RVO crowd simulator."""

__version__ = "0.1.0"
