# Test package for the one-bit OFDM detector
