#!/usr/bin/env python3
"""Regenerates data/fitness_weights_v1.csv and include/eddpm/fitness_table.hpp.

The table is affinely rescaled so the lowest and highest attainable fitness of
a length-20 sequence are -2 and 3, then rounded to 6 decimals.
"""
import numpy as np

L, V = 20, 20
rng = np.random.default_rng(20240611)
w = rng.normal(0, 1, (L, V))
lo, hi = w.min(1).sum(), w.max(1).sum()
a = 5.0 / (hi - lo)
b = (-2.0 - a * lo) / L
w = np.round(a * w + b, 6)

with open("data/fitness_weights_v1.csv", "w") as f:
    f.write("# additive fitness weights v1: row = position, column = token id\n")
    for p in range(L):
        f.write(",".join("%.6f" % x for x in w[p]) + "\n")

with open("include/eddpm/fitness_table.hpp", "w") as f:
    f.write("#pragma once\n\n// Generated from data/fitness_weights_v1.csv. Do not edit by hand.\n\n")
    f.write("#include <array>\n\nnamespace eddpm {\n\n")
    f.write("inline constexpr int kFitnessTableVersion = 1;\n\n")
    f.write("// Row = sequence position (20), column = token id (20).\n")
    f.write("inline constexpr std::array<std::array<double, 20>, 20> kFitnessWeights{{\n")
    for p in range(L):
        f.write("    {" + ", ".join("%.6f" % x for x in w[p]) + "},\n")
    f.write("}};\n\n}  // namespace eddpm\n")
