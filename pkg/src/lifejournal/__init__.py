"""Life journals from long smartphone sensor traces.

Pipeline: per-window features -> rule-based motion candidates -> map/SSID
location contexts -> batched fusion and motion calibration -> hourly journals.
"""

__version__ = "0.1.0"
