"""Underwater source-range localization with CNNs and source-free domain adaptation.

Modules
-------
ocean        shallow-water normal-mode propagation
signal       snapshot synthesis, noise, time-domain segmentation
features     normalized sample covariance matrices
labels       range grid and soft labels
nn_core      numpy neural-network engine
localizer    CNN range classifier, training, Bartlett matched-field processing
adaptation   SHOT and energy-assisted (JSEA) source-free adaptation
harness      experiment configuration, sweeps, plots and the CLI
"""

__version__ = "0.1.0"
