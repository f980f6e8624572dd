"""Twin-experiment flood reanalysis and forecasting testbed.

A surrogate river-floodplain hydraulic model, a stochastic ensemble Kalman
filter with Gaussian anamorphosis for bounded observations, cycled
reanalysis/forecast orchestration, synthetic observation generation, and a
verification suite (RMSE/gain, contingency maps, CSI, lead-time skill,
high-water-mark scoring).
"""

__version__ = "0.1.0"
