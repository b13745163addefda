"""
terra - Terramechanics Surrogate and Terrain Estimation Toolkit
================================================================
Reference rigid-wheel/deformable-soil force model, Latin hypercube training
data, a twice-differentiable neural surrogate, a 3-DoF bicycle model and an
unscented Kalman filter that estimates the sinkage exponent online.
"""

__version__ = "1.0.0"
