"""Feature-name registry.

The registry is the contract between feature extraction and modelling: the
assembled matrix must contain exactly these columns, in this order. Candidate
sets for the three model families are defined on top of it.

Naming scheme
-------------
* ``*_cmean`` / ``*_csd``  circular mean / SD in clock hours
* ``*_mean`` / ``*_sd``    arithmetic mean / SD across days or nights
* ``mims_fft_freq_r``      frequency (cycles/day) of the r-th largest FFT
                           amplitude of the activity signal; same for lux
* ``*_strength_24h`` etc.  FFT amplitude at the fixed 24/12/8 h periods
"""
from __future__ import annotations

from .matrix import KIND_NOMINAL, KIND_NUMERIC, KIND_ORDINAL

SLEEP_FEATURES = [
    "sleep_onset_cmean",
    "sleep_onset_csd",
    "sleep_offset_cmean",
    "sleep_offset_csd",
    "sleep_duration_mean",
    "sleep_duration_sd",
    "sleep_efficiency_mean",
    "sleep_efficiency_sd",
]

ACTIVITY_FEATURES = [
    "sedentary_min_mean",
    "sedentary_min_sd",
    "light_min_mean",
    "light_min_sd",
    "mvpa_min_mean",
    "mvpa_min_sd",
]

_SUMMARY_STATS = [
    "mean", "median", "sd", "max", "min", "q25", "q75", "skew", "kurtosis", "entropy",
]
SIGNAL_SUMMARY_FEATURES = [f"mims_{s}" for s in _SUMMARY_STATS] + [
    f"lux_{s}" for s in _SUMMARY_STATS
]

N_FFT_FEATURES = 15
FFT_FEATURES = [f"mims_fft_freq_{r}" for r in range(1, N_FFT_FEATURES + 1)] + [
    f"lux_fft_freq_{r}" for r in range(1, N_FFT_FEATURES + 1)
]

CIRCADIAN_FEATURES = [
    "l5_midpoint_cmean",
    "l5_midpoint_csd",
    "m10_midpoint_cmean",
    "m10_midpoint_csd",
    "l5_activity_mean",
    "l5_activity_sd",
    "m10_activity_mean",
    "m10_activity_sd",
    "l5_lux_mean",
    "l5_lux_sd",
    "m10_lux_mean",
    "m10_lux_sd",
    "relative_amplitude_mean",
    "relative_amplitude_sd",
    "intradaily_variability_mean",
    "intradaily_variability_sd",
    "interdaily_stability",
    "mims_strength_24h",
    "mims_strength_12h",
    "mims_strength_8h",
    "lux_strength_24h",
    "lux_strength_12h",
    "lux_strength_8h",
    "lux_sleep_mean",
    "lux_sleep_sd",
    "lux_nonsleep_mean",
    "lux_nonsleep_sd",
]

STATIC_FEATURES = ["age", "sex", "education"]
CONVENTIONAL_ONLY_FEATURES = ["marital", "income", "diabetic", "phq9", "adl_iadl"]

WEARABLE_FEATURES = (
    SLEEP_FEATURES
    + ACTIVITY_FEATURES
    + SIGNAL_SUMMARY_FEATURES
    + FFT_FEATURES
    + CIRCADIAN_FEATURES
)

REGISTRY = WEARABLE_FEATURES + STATIC_FEATURES + CONVENTIONAL_ONLY_FEATURES

# Candidate sets per model family. Age, sex and education ride along with the
# wearable features because they need no manual data entry on-device.
BENCHMARK_FEATURES = STATIC_FEATURES + CONVENTIONAL_ONLY_FEATURES
WEARABLE_CANDIDATES = WEARABLE_FEATURES + STATIC_FEATURES

MARITAL_CATEGORIES = {
    1: "married",
    2: "widowed",
    3: "divorced",
    4: "separated",
    5: "never_married",
    6: "living_with_partner",
}

COLUMN_KINDS = {name: KIND_NUMERIC for name in REGISTRY}
COLUMN_KINDS["education"] = KIND_ORDINAL
COLUMN_KINDS["income"] = KIND_ORDINAL
COLUMN_KINDS["marital"] = KIND_NOMINAL

COLUMN_CATEGORIES = {"marital": MARITAL_CATEGORIES}


def combined_features(selected_wearable: list[str]) -> list[str]:
    """Combined-model set: the wearable selection plus every conventional-only column."""
    return list(selected_wearable) + [
        c for c in CONVENTIONAL_ONLY_FEATURES if c not in selected_wearable
    ]
