"""catdesk: desk-scale CTC-CRF training, streaming inference, and WFST decoding."""

__version__ = "0.1.0"
