"""
GMM versus GCMM on the distribution of row sums
===============================================

For each seed: simulate, hide part of the data, fit three models at K=3,
resample, and KS-test the resampled row sums against fresh data.  Small
sizes keep this quick; ``BenchmarkSizes.large()`` gives the KS test
enough power to separate the methods (a few minutes on one core).
"""

import sys

from gcmm import BenchmarkSizes, FitConfig, GeneratorSpec, run_benchmark

sizes = BenchmarkSizes.large() if "--large" in sys.argv else BenchmarkSizes()
report = run_benchmark(GeneratorSpec.default(), range(5), FitConfig(), sizes, k=3)
print(report.to_text())
