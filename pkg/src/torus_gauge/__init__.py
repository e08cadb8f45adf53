"""Lattice gauge fixing on the flat four-torus with critical-exponent norms."""
from .fields import Field, GaugeTransform, bump_connection, random_bandlimited
from .gaugefix import continuation_gauge_fix, newton_gauge_fix
from .green import K0, green_apply, nu0, nu2, spectrum_report
from .manifold import Grid4
from .norms import composite_norms, l2sharp_norm, lp_norm, lsharp_norm
from .operators import Connection, gauge_apply
from .verify import SuiteConfig, SuiteReport, chern_weil

__version__ = "0.1.0"
