"""Multi-task time-to-event learning toolkit.

Submodules: autodiff (tape engine), model (aggregator + heads), losses,
surgery (PCGrad + conflict telemetry), datagen (synthetic cohorts),
metrics (AUROC/AUPRC/TTE-MAE), harness (training + evaluation + presets).
"""

__version__ = "0.1.0"
