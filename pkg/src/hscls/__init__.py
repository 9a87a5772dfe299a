"""Text classification toolkit for HS-code prediction.

Library layout:

- ``corpus``   -- ingestion, normalization, tokenization, splitting, upsampling
- ``nn``       -- minimal differentiable layer set (embedding, conv1d, dense, ...)
- ``models``   -- DNN / Text-CNN assembly, training, weight serialization
- ``tuner``    -- Gaussian-process Bayesian hyperparameter search
- ``metrics``  -- confusion-matrix metrics, F-beta, 80/90 band tables
- ``abtest``   -- k-fold cross-validation + ANOVA model comparison
- ``pipeline`` -- event-driven inference/retraining orchestrator + model registry
- ``synth``    -- synthetic keyword corpus generator for benchmarks
- ``cli``      -- the ``hscls`` command-line entry point
"""

__version__ = "0.1.0"
