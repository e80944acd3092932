# Gaussian process models package
