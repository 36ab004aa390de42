"""Embedded calibration data for the seven built-in test problems.

Each record carries per-class rates and cost parameters estimated for a
large retail-bank call center (rates per hour, costs in dollars), plus
the groupings and hyperparameter presets the other modules consume.
"""
from __future__ import annotations

# Overtime pay per leftover call at the end of the day, dollars.
OVERTIME_RATE = 2.12

# Defaults for the seventeen-class problem.
BASE_SCALE_R = 400.0
HORIZON_HOURS = 17.0
INTERVAL_COUNT = 204  # five-minute bins over seventeen hours
TARGET_LOAD = 0.90
AVG_AGENTS = 273.0

# (name, arrival %, service rate, abandonment rate, penalty per job, holding $/hr)
MAIN17_ROWS = (
    ("Retail (Node: 1)", 15.39, 17.22, 6.06, 2.000, 24.00),
    ("Retail (Node: 2)", 22.82, 17.25, 7.81, 2.000, 24.00),
    ("Retail (Node: 3)", 15.50, 17.25, 5.22, 2.000, 24.00),
    ("Premier", 3.46, 13.15, 9.79, 2.167, 26.00),
    ("Business", 4.82, 16.56, 8.58, 2.500, 30.00),
    ("Platinum", 0.34, 17.20, 7.50, 2.667, 32.00),
    ("Consumer Loans", 6.92, 15.19, 4.87, 1.833, 22.00),
    ("Online Banking", 2.64, 10.60, 5.58, 1.833, 22.00),
    ("EBO", 0.72, 9.87, 8.24, 1.667, 20.00),
    ("Telesales", 6.26, 9.62, 8.99, 1.833, 22.00),
    ("Subanco", 0.51, 11.79, 6.39, 1.667, 20.00),
    ("Case Quality", 0.84, 9.93, 9.27, 1.667, 20.00),
    ("Priority Service", 1.47, 10.35, 9.14, 2.667, 32.00),
    ("AST", 3.42, 12.52, 7.50, 1.833, 22.00),
    ("CCO", 8.34, 15.20, 7.10, 1.833, 22.00),
    ("Brokerage", 5.78, 12.62, 6.89, 1.833, 22.00),
    ("BPS", 0.77, 13.57, 5.92, 1.667, 20.00),
)

MAIN17_NAMES = tuple(r[0] for r in MAIN17_ROWS)

# Two-class aggregation: which source classes merge into each new class.
DIM2_GROUPS = (
    ("Retail (Node: 2)", "Business", "Telesales", "Consumer Loans",
     "Online Banking", "CCO"),
    ("Retail (Node: 1)", "Retail (Node: 3)", "Premier", "Platinum", "EBO",
     "Subanco", "Case Quality", "Priority Service", "AST", "Brokerage", "BPS"),
)

# Three-class aggregation.
DIM3_GROUPS = (
    ("Retail (Node: 2)", "Business", "Telesales"),
    ("Retail (Node: 1)", "Consumer Loans", "Online Banking", "CCO"),
    ("Retail (Node: 3)", "Premier", "Platinum", "EBO", "Subanco",
     "Case Quality", "Priority Service", "AST", "Brokerage", "BPS"),
)

# The three-class variant halves the class-2 cost parameters (p, h).
DIM3_VARIANT_HALVED_CLASS = 1  # zero-based index

# High-dimensional problems: classes share common service/abandonment/penalty
# parameters and differ only by arrival curve (copied from a source class) and
# holding cost drawn from a uniform grid on [14, 34].
# Rows: (source class name, arrival %, holding $/hr)
DIM30_COMMON = {"mu": 14.07, "theta": 7.80, "p": 1.97}
DIM30_ROWS = (
    ("Consumer Loans", 3.77, 15.50),
    ("CCO", 4.54, 20.50),
    ("Subanco", 0.28, 21.50),
    ("Online Banking", 1.44, 24.00),
    ("Consumer Loans", 3.77, 30.50),
    ("Subanco", 0.28, 16.50),
    ("Subanco", 0.28, 20.00),
    ("Premier", 1.88, 33.00),
    ("Online Banking", 1.44, 23.50),
    ("Retail (Node: 3)", 8.44, 14.50),
    ("Retail (Node: 2)", 12.38, 25.00),
    ("Case Quality", 0.46, 31.50),
    ("Platinum", 0.19, 27.00),
    ("Retail (Node: 2)", 12.38, 32.00),
    ("Retail (Node: 1)", 8.38, 29.50),
    ("Case Quality", 0.46, 22.50),
    ("Case Quality", 0.46, 30.00),
    ("BPS", 0.42, 18.50),
    ("Telesales", 3.41, 16.00),
    ("Brokerage", 3.09, 28.50),
    ("CCO", 4.54, 24.50),
    ("CCO", 4.54, 15.00),
    ("Case Quality", 0.46, 27.50),
    ("Retail (Node: 3)", 8.44, 22.00),
    ("Business", 2.62, 23.00),
    ("Consumer Loans", 3.77, 19.00),
    ("EBO", 0.39, 29.00),
    ("Consumer Loans", 3.77, 17.50),
    ("Premier", 1.88, 19.50),
    ("AST", 1.86, 31.00),
)

DIM50_COMMON = {"mu": 13.69, "theta": 7.14, "p": 2.08}
DIM50_ROWS = (
    ("Consumer Loans", 2.12, 17.75),
    ("CCO", 2.56, 16.25),
    ("Subanco", 0.16, 31.75),
    ("Online Banking", 0.81, 33.75),
    ("Consumer Loans", 2.12, 30.75),
    ("Subanco", 0.16, 25.50),
    ("Subanco", 0.16, 24.00),
    ("Premier", 1.06, 18.25),
    ("Online Banking", 0.81, 26.00),
    ("Retail (Node: 3)", 4.75, 23.25),
    ("Retail (Node: 2)", 6.97, 31.50),
    ("Case Quality", 0.26, 19.00),
    ("Platinum", 0.11, 30.00),
    ("Retail (Node: 2)", 6.97, 25.75),
    ("Retail (Node: 1)", 4.72, 31.00),
    ("Case Quality", 0.26, 23.00),
    ("Case Quality", 0.26, 18.50),
    ("BPS", 0.24, 15.00),
    ("Telesales", 1.92, 25.25),
    ("Brokerage", 1.74, 23.75),
    ("CCO", 2.56, 32.25),
    ("CCO", 2.56, 29.75),
    ("Case Quality", 0.26, 16.75),
    ("Retail (Node: 3)", 4.75, 21.50),
    ("Business", 1.48, 20.25),
    ("Consumer Loans", 2.12, 18.00),
    ("EBO", 0.22, 26.25),
    ("Consumer Loans", 2.12, 22.50),
    ("Premier", 1.06, 22.25),
    ("AST", 1.05, 29.00),
    ("EBO", 0.22, 30.50),
    ("Retail (Node: 2)", 6.97, 31.25),
    ("CCO", 2.56, 19.75),
    ("Consumer Loans", 2.12, 29.25),
    ("Case Quality", 0.26, 33.25),
    ("Online Banking", 0.81, 28.25),
    ("CCO", 2.56, 15.75),
    ("Retail (Node: 3)", 4.75, 27.50),
    ("AST", 1.05, 28.00),
    ("BPS", 0.24, 14.50),
    ("Premier", 1.06, 30.25),
    ("Online Banking", 0.81, 33.50),
    ("Premier", 1.06, 14.00),
    ("Retail (Node: 2)", 6.97, 22.00),
    ("Platinum", 0.11, 23.50),
    ("Telesales", 1.92, 20.00),
    ("Premier", 1.06, 27.75),
    ("Case Quality", 0.26, 16.50),
    ("Retail (Node: 2)", 6.97, 21.25),
    ("Telesales", 1.92, 18.75),
)

DIM100_COMMON = {"mu": 13.86, "theta": 7.35, "p": 1.86}
DIM100_ROWS = (
    ("Consumer Loans", 1.03, 26.75),
    ("CCO", 1.24, 23.38),
    ("Subanco", 0.08, 15.25),
    ("Online Banking", 0.39, 17.75),
    ("Consumer Loans", 1.03, 27.12),
    ("Subanco", 0.08, 30.62),
    ("Subanco", 0.08, 32.50),
    ("Premier", 0.51, 33.12),
    ("Online Banking", 0.39, 30.00),
    ("Retail (Node: 3)", 2.31, 33.50),
    ("Retail (Node: 2)", 3.39, 32.75),
    ("Case Quality", 0.12, 22.75),
    ("Platinum", 0.05, 22.62),
    ("Retail (Node: 2)", 3.39, 22.00),
    ("Retail (Node: 1)", 2.29, 18.88),
    ("Case Quality", 0.12, 31.75),
    ("Case Quality", 0.12, 27.38),
    ("BPS", 0.11, 23.00),
    ("Telesales", 0.93, 15.12),
    ("Brokerage", 0.84, 24.62),
    ("CCO", 1.24, 17.50),
    ("CCO", 1.24, 29.62),
    ("Case Quality", 0.12, 20.38),
    ("Retail (Node: 3)", 2.31, 20.88),
    ("Business", 0.72, 31.62),
    ("Consumer Loans", 1.03, 14.25),
    ("EBO", 0.11, 33.88),
    ("Consumer Loans", 1.03, 20.75),
    ("Premier", 0.51, 21.62),
    ("AST", 0.51, 29.00),
    ("EBO", 0.11, 29.75),
    ("Retail (Node: 2)", 3.39, 21.25),
    ("CCO", 1.24, 14.50),
    ("Consumer Loans", 1.03, 25.62),
    ("Case Quality", 0.12, 22.88),
    ("Online Banking", 0.39, 23.62),
    ("CCO", 1.24, 32.12),
    ("Retail (Node: 3)", 2.31, 31.38),
    ("AST", 0.51, 19.00),
    ("BPS", 0.11, 27.25),
    ("Premier", 0.51, 30.12),
    ("Online Banking", 0.39, 32.62),
    ("Premier", 0.51, 23.75),
    ("Retail (Node: 2)", 3.39, 23.12),
    ("Platinum", 0.05, 18.12),
    ("Telesales", 0.93, 28.50),
    ("Premier", 0.51, 15.75),
    ("Case Quality", 0.12, 23.50),
    ("Retail (Node: 2)", 3.39, 15.38),
    ("Telesales", 0.93, 15.62),
    ("Premier", 0.51, 15.88),
    ("AST", 0.51, 24.00),
    ("Brokerage", 0.84, 29.38),
    ("CCO", 1.24, 14.00),
    ("Online Banking", 0.39, 16.38),
    ("AST", 0.51, 19.50),
    ("Online Banking", 0.39, 18.38),
    ("Brokerage", 0.84, 21.00),
    ("Priority Service", 0.22, 14.75),
    ("CCO", 1.24, 24.25),
    ("Priority Service", 0.22, 25.88),
    ("EBO", 0.11, 15.50),
    ("CCO", 1.24, 23.88),
    ("Priority Service", 0.22, 25.25),
    ("Retail (Node: 1)", 2.29, 20.12),
    ("Consumer Loans", 1.03, 17.12),
    ("EBO", 0.11, 19.12),
    ("Retail (Node: 1)", 2.29, 18.75),
    ("Case Quality", 0.12, 33.00),
    ("Online Banking", 0.39, 19.25),
    ("Subanco", 0.08, 15.00),
    ("BPS", 0.11, 24.88),
    ("Online Banking", 0.39, 27.00),
    ("Retail (Node: 3)", 2.31, 14.12),
    ("Retail (Node: 3)", 2.31, 29.12),
    ("Retail (Node: 1)", 2.29, 22.12),
    ("Business", 0.72, 16.75),
    ("Telesales", 0.93, 19.75),
    ("Consumer Loans", 1.03, 25.12),
    ("EBO", 0.11, 28.12),
    ("Consumer Loans", 1.03, 25.75),
    ("EBO", 0.11, 25.00),
    ("Online Banking", 0.39, 21.12),
    ("Case Quality", 0.12, 29.50),
    ("Retail (Node: 2)", 3.39, 17.00),
    ("Retail (Node: 1)", 2.29, 16.12),
    ("Brokerage", 0.84, 22.25),
    ("Business", 0.72, 30.50),
    ("Retail (Node: 3)", 2.31, 24.75),
    ("Case Quality", 0.12, 17.88),
    ("Online Banking", 0.39, 24.50),
    ("Retail (Node: 3)", 2.31, 21.75),
    ("Retail (Node: 1)", 2.29, 21.38),
    ("Retail (Node: 3)", 2.31, 20.50),
    ("Business", 0.72, 26.38),
    ("CCO", 1.24, 26.50),
    ("AST", 0.51, 16.88),
    ("Retail (Node: 3)", 2.31, 18.50),
    ("Retail (Node: 1)", 2.29, 14.62),
    ("Business", 0.72, 19.62),
)

HIGHDIM_SPECS = {
    "dim30": (DIM30_ROWS, DIM30_COMMON, 0.5),
    "dim50": (DIM50_ROWS, DIM50_COMMON, 0.25),
    "dim100": (DIM100_ROWS, DIM100_COMMON, 0.125),
}

HOLDING_GRID_BOUNDS = (14.0, 34.0)

# Groupings for the auxiliary low-dimensional benchmark policy on the
# seventeen-class problem: high-priority classes are always served first;
# the low-priority subgroups are prioritized dynamically.
AUX_HIGH_PRIORITY = (
    "Retail (Node: 1)", "Retail (Node: 2)", "Retail (Node: 3)",
    "Platinum", "Business", "Consumer Loans", "CCO", "BPS",
)
AUX_LOW_GROUPS = (
    ("Priority Service", "Brokerage", "Premier"),
    ("Online Banking", "AST", "Subanco"),
    ("Telesales", "EBO", "Case Quality"),
)
AUX_TRUNCATION = (150, 110, 125)

# Five-group partition used by the grouped linear-gradient heuristic.
HEUR3_GROUPS = (
    ("Platinum", "Retail (Node: 3)", "Retail (Node: 1)", "Business"),
    ("Consumer Loans", "Retail (Node: 2)", "CCO", "BPS"),
    ("Priority Service", "Brokerage", "Premier"),
    ("Online Banking", "AST", "Subanco"),
    ("Telesales", "EBO", "Case Quality"),
)

# Coefficient search bounds for the grouped linear-gradient heuristic
# (10th/90th percentiles of the observed gradient-to-state ratios).
HEUR3_GRID_BOUNDS = (
    (0.000109, 0.311413),
    (0.000082, 0.094491),
    (0.000186, 0.499766),
    (0.000236, 0.356866),
    (0.000145, 0.323169),
)

# MDP truncation defaults for the low-dimensional problems.
MDP_TRUNCATION = {
    "dim2": (310, 310),
    "dim3": (210, 210, 210),
    "dim3_variant": (210, 210, 210),
}

# Training presets per test problem.  Learning-rate schedules are lists of
# (start iteration, end iteration, rate).
TRAIN_PRESETS = {
    "dim2": {
        "interval_count": 3060,
        "iterations": 5000,
        "decision_freq_hours": 20.0 / 3600.0,
        "reference_policy": ("evenly_split",),
        "lr_schedule": [(0, 3750, 1e-2), (3750, 5000, 1e-3)],
        "penalty_weight": 0.5,
        "kappa": 1.0,
    },
    "dim3": {
        "interval_count": 3060,
        "iterations": 7500,
        "decision_freq_hours": 20.0 / 3600.0,
        "reference_policy": ("static_priority", 1),
        "lr_schedule": [(0, 3750, 1e-2), (3750, 5200, 1e-3),
                        (5200, 6500, 5e-4), (6500, 7500, 1e-4)],
        "penalty_weight": 2.0,
        "kappa": 1.0,
    },
    "dim3_variant": {
        "interval_count": 3060,
        "iterations": 5000,
        "decision_freq_hours": 20.0 / 3600.0,
        "reference_policy": ("static_priority", 0),
        "lr_schedule": [(0, 3750, 1e-2), (3750, 5000, 1e-3)],
        "penalty_weight": 0.0,
        "kappa": 1.0,
    },
    "main17": {
        "interval_count": 3060,
        "iterations": 20000,
        "decision_freq_hours": 20.0 / 3600.0,
        "reference_policy": ("weighted_split", (0, 1, 2), 0.18, 0.03285),
        "lr_schedule": [(0, 3750, 1e-2), (3750, 6000, 1e-3),
                        (6000, 8000, 5e-4), (8000, 11000, 1e-4),
                        (11000, 15000, 5e-5), (15000, 20000, 1e-5)],
        "penalty_weight": 0.5,
        "kappa": 1.0,
    },
    "dim30": {
        "interval_count": 3060,
        "iterations": 8000,
        "decision_freq_hours": 5.0 / 60.0,
        "reference_policy": ("minimal",),
        "lr_schedule": [(0, 3750, 1e-2), (3750, 5500, 1e-3),
                        (5500, 6500, 5e-4), (6500, 7500, 1e-4),
                        (7500, 8000, 5e-5)],
        "penalty_weight": 0.5,
        "kappa": 1.0,
    },
    "dim50": {
        "interval_count": 204,
        "iterations": 10000,
        "decision_freq_hours": 5.0 / 60.0,
        "reference_policy": ("minimal",),
        "lr_schedule": [(0, 3750, 1e-2), (3750, 6000, 1e-3),
                        (6000, 7500, 5e-4), (7500, 9500, 1e-4),
                        (9500, 10000, 5e-5)],
        "penalty_weight": 0.5,
        "kappa": 1.0,
    },
    "dim100": {
        "interval_count": 204,
        "iterations": 50000,
        "decision_freq_hours": 5.0 / 60.0,
        "reference_policy": ("minimal",),
        "lr_schedule": [(0, 3750, 1e-2), (3750, 10000, 1e-3),
                        (10000, 20000, 5e-4), (20000, 30000, 1e-4),
                        (30000, 50000, 5e-5)],
        "penalty_weight": 0.5,
        "kappa": 3.0,
    },
}

# Regression-net presets for the dynamic index heuristics.
HEUR_FIT_PRESETS = {
    "per_step": {
        "hidden_layers": 2,
        "hidden_width": 100,
        "batch_size": 190,
        "iterations": 5000,
        "lr_schedule": [(0, 200, 1e-3), (200, 1000, 1e-4),
                        (1000, 3000, 5e-5), (3000, 5000, 1e-5)],
        "penalty_weight": 0.5,
    },
    "pooled": {
        "hidden_layers": 2,
        "hidden_width": 100,
        "batch_size": 38760,
        "iterations": 10000,
        "lr_schedule": [(0, 1000, 1e-3), (1000, 4000, 1e-4),
                        (4000, 5000, 1e-5), (5000, 8000, 5e-6),
                        (8000, 10000, 1e-6)],
        "penalty_weight": 0.5,
    },
}

PENALTY_WEIGHT_GRID = (0.0, 0.5, 1.0, 1.5, 2.0)


def class_index(name: str) -> int:
    return MAIN17_NAMES.index(name)
