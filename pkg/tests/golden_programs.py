import math

# (program, numbers, answer) with answers worked out by hand; the floats are
# written as closed forms so nothing here calls the executor's own formulas.
GOLDEN = [
    ("g_minus N_0 N_1", {"N_0": 16, "N_1": 4}, 12.0),
    ("gougu_plus N_0 N_1", {"N_0": 3, "N_1": 4}, 5.0),
    ("g_sin C_30 g_mul V_0 N_0", {"N_0": 10}, 5.0),
    ("g_add N_0 N_1", {"N_0": 2.5, "N_1": 4.25}, 6.75),
    ("g_mul N_0 N_1", {"N_0": 7, "N_1": 6}, 42.0),
    ("g_divide N_0 N_1", {"N_0": 21, "N_1": 4}, 5.25),
    ("g_half N_0", {"N_0": 13}, 6.5),
    ("g_double N_0", {"N_0": 13}, 26.0),
    ("g_sqrt N_0", {"N_0": 169}, 13.0),
    ("g_pow2 N_0", {"N_0": 12}, 144.0),
    ("gougu_minus N_0 N_1", {"N_0": 13, "N_1": 5}, 12.0),
    ("gougu_plus N_0 N_1", {"N_0": 8, "N_1": 15}, 17.0),
    ("g_cos C_60", {}, 0.5),
    ("g_tan C_45", {}, 1.0),
    ("g_cos N_0", {"N_0": 180}, -1.0),
    ("proportion N_0 N_1", {"N_0": 0.75, "N_1": 8}, 6.0),
    ("circle_area N_0", {"N_0": 3}, 9 * math.pi),
    ("circle_perimeter N_0", {"N_0": 5}, 10 * math.pi),
    ("g_minus C_180 N_0 g_minus V_0 N_1", {"N_0": 50, "N_1": 60}, 70.0),
    ("g_minus C_90 N_0", {"N_0": 35}, 55.0),
    ("g_half N_0 g_pow2 V_0 g_mul V_1 C_PI", {"N_0": 6}, 9 * math.pi),
    ("g_divide N_0 N_1 g_mul V_0 N_2", {"N_0": 3, "N_1": 4, "N_2": 12}, 9.0),
    ("gougu_plus N_0 N_1 g_half V_0", {"N_0": 6, "N_1": 8}, 5.0),
    ("g_sin C_30 g_divide N_0 V_0", {"N_0": 7}, 14.0),
    ("g_add N_0 N_1 g_add V_0 N_2 g_half V_1", {"N_0": 3, "N_1": 4, "N_2": 5}, 6.0),
    ("g_mul C_2 N_0 g_minus C_180 V_0", {"N_0": 40}, 100.0),
    ("g_cos C_60 g_mul N_0 V_0 g_double V_1", {"N_0": 9}, 9.0),
    ("circle_perimeter N_0 g_divide V_0 C_PI", {"N_0": 4}, 8.0),
    ("g_sqrt N_0 g_add V_0 V_0", {"N_0": 2}, 2 * math.sqrt(2)),
    ("g_minus N_0 N_1 g_mul V_0 N_2 g_add V_1 V_0", {"N_0": 10, "N_1": 4, "N_2": 3}, 24.0),
]
