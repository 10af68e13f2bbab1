"""Differential forms, quasiregular maps and their numerical verification."""

from .exterior import (ComassBudget, ComassResult, KCovector, KVector, Metric, comass_norm, compound_matrix,
                       grassmann_inner, metric_flat, metric_sharp, norm, simple_orthogonalize, wedge, wedge_all)
from .linear import FiberLinearMap, SvdSummary, dilatation, jacobian_inequalities, pullback_linear, svd_analysis
from .forms import (GridDomain, Mollifier, SampledForm, TestFormFamily, convolve_form, exterior_derivative_fd,
                    integrate_top_form, lp_norm, weak_derivative_residual)
from .maps import (DifferentiableMap, chart_conjugate, chart_definition_verdict, dilatation_field, map_library,
                   pullback_form)
from .manifolds import Chart, ChartAtlas, riemannian_integral, sphere_atlas, torus_atlas, transition_check
from .degree import degree_sum_check, local_index_2d, normal_neighborhood, preimage_count
from .report import Check, VerificationReport, emit_report
from .rng import Xorshift64Star

__version__ = "0.1.0"
