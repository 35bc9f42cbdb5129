"""Why a fixed power factor halves the information in the data.

With Q = tan(phi) P at every meter, the reactance block of the data matrix
is a multiple of the resistance block, so only r + tan(phi) x can be
recovered per edge. The diagnostic spots this and reports tan(phi).
"""
import numpy as np

from feederid.library import default_library
from feederid.network import aggregate_flows
from feederid.polytope import assemble_halfspaces, diagnose_identifiability
from feederid.simulate import (Z_BASE, FixedPowerFactor, UniformInjections, assign_cables,
                               make_dataset, random_feeder)

top = random_feeder(12, (), seed=0)
z = assign_cables(top, default_library(top.n_edges, Z_BASE), seed=0).z_true

for name, sampler in (("pf 0.95", FixedPowerFactor(pf=0.95)), ("mixed pf", UniformInjections())):
    data = make_dataset(top, z, sampler, 10, seed=1)
    rep = diagnose_identifiability(assemble_halfspaces(top, data, aggregate_flows(top, data), 1e-4))
    line = f"{name:9s} rank {rep.rank:2d} of {rep.n_columns}"
    if rep.constant_pf:
        line += f"  constant power factor, tan(phi) = {rep.tan_phi:.6f}"
    print(line)

print(f"tan(acos 0.95) = {np.tan(np.arccos(0.95)):.6f}")
