# RIXS spectra engine
