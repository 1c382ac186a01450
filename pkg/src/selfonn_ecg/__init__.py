"""Inter-patient ECG beat classification with self-organized operational networks."""

__version__ = "0.1.0"
