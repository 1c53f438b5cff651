"""Credit-bond default-risk labeling and next-day forecasting"""

__version__ = "1.0.0"
