"""CIN blind watermarking: invertible + non-invertible embedding and extraction."""
