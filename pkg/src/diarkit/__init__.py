"""diarkit: speaker diarization with x-vectors, PLDA / Bi-LSTM scoring and AHC / spectral clustering."""

__version__ = "0.1.0"
