# Experiment runner package
