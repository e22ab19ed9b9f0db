"""
Report builders shared by the command line and the tool server, plus the
static SVG emitters for phase diagrams and risk curves
"""
import math

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.colors import ListedColormap
from matplotlib.patches import Patch
import numpy as np

from bounds import (MATCHING_SM, SPARSE_SM, SPCA, BoundParams, Regime,
                    closed_form_bound_matching, closed_form_bound_sparse,
                    closed_form_bound_spca, lecam_report, matching_hypothesis,
                    normalize_problem, risk_lower_bound, spca_precondition,
                    sup_distinguishable_numeric)
from models import SHIFTED_MEAN, SPIKED_COVARIANCE, ProblemInstance
from structure_classes import (PERFECT_MATCHING, StructureClass, enumerate_class,
                               overlap_distribution, shell_counts)
from utils import HypothesisViolatedError, log_debug

SIGNIFICANT_DIGITS = 6

REGIME_ORDER = [Regime.IMPOSSIBLE, Regime.INTRACTABLE_POSSIBLE, Regime.TRACTABLE, Regime.BOUNDARY]
REGIME_COLORS = ["#d7301f", "#fdbb84", "#2b8cbe", "#636363"]
EXPONENTS = ["p_s", "p_beta", "p_n", "p_alpha"]

# Element listings in enumerate reports stop here
LISTING_LIMIT = 5000


def format_value(value):
    """Human-table rendering: 6 significant digits, N/A for missing values."""
    if value is None:
        return "N/A"
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if not isinstance(value, (float, np.floating)) or not math.isfinite(value):
        return str(value)
    return f"{value:.{SIGNIFICANT_DIGITS}g}"


def format_table(rows, title=None):
    """Two-column text table from (label, value) pairs."""
    width = max((len(str(label)) for label, _ in rows), default=0)
    lines = [title, "-" * len(title)] if title else []
    lines += [f"{str(label).ljust(width)}  {format_value(value)}" for label, value in rows]
    return "\n".join(lines)


def build_instance(problem, d, s_star, beta_star, alpha=1.0):
    """Detection instance for a problem tag (sparse-sm, matching-sm, spca)."""
    problem = normalize_problem(problem)
    if problem == MATCHING_SM:
        return ProblemInstance(SHIFTED_MEAN, StructureClass.matching(d), beta_star, alpha)
    if problem == SPCA:
        return ProblemInstance(SPIKED_COVARIANCE, StructureClass.sparse(d, s_star), beta_star)
    return ProblemInstance(SHIFTED_MEAN, StructureClass.sparse(d, s_star), beta_star, alpha)


def _closed_form(name, hypothesis, check, evaluate):
    """Evaluate a closed form only when its hypothesis holds; N/A otherwise."""
    try:
        holds = bool(check())
    except HypothesisViolatedError:
        holds = False
    value = None
    if holds:
        try:
            value = evaluate()
        except HypothesisViolatedError as e:
            log_debug(f"{name}: {e}")
            holds = False
    return {"name": name, "hypothesis": hypothesis, "holds": holds, "value": value}


def _closed_forms(problem, params):
    if problem == SPARSE_SM:
        return [
            _closed_form("sparse setting (i)", "zeta = d/(2 s*^2) > 1",
                         lambda: params.zeta > 1.0,
                         lambda: closed_form_bound_sparse(params, "i")),
            _closed_form("sparse setting (ii)", "gamma > 1",
                         lambda: params.gamma > 1.0,
                         lambda: closed_form_bound_sparse(params, "ii")),
        ]
    if problem == MATCHING_SM:
        return [_closed_form("perfect matching", "log(1+tau^2/alpha^2)/beta*^2 >= 3 d^delta/2 + 1",
                             lambda: matching_hypothesis(params)[0] >= matching_hypothesis(params)[1],
                             lambda: closed_form_bound_matching(params))]

    def spca_holds():
        lhs, rhs = spca_precondition(params)
        return params.spca_delta > 0 and lhs <= rhs
    return [_closed_form("sparse PCA", "d > s*^2 and 2 d^-delta (gamma_bar - 1) <= tau^2",
                         spca_holds, lambda: closed_form_bound_spca(params))]


def bounds_report(problem, d, s_star, beta_star, n, xi, T, alpha=1.0, delta=None):
    """
    Numeric sup|C(q)|, the oracle risk bound for T queries and every
    closed form that applies at this point.

    Returns
    -------
    dict
        JSON-ready report
    """
    problem = normalize_problem(problem)
    instance = build_instance(problem, d, s_star, beta_star, alpha)
    structure = instance.structure
    params = BoundParams.from_instance(instance, n, xi, delta)
    sup_cq = sup_distinguishable_numeric(structure, instance, n, xi)
    size = structure.cardinality
    return {
        "problem": problem,
        "instance": instance.describe(),
        "params": params.to_dict(),
        "threshold": 1.0 + math.log(1.0 / xi) / n,
        "class_size": size,
        "sup_cq_numeric": sup_cq,
        "sup_ratio": sup_cq / size,
        "T": T,
        "risk_lower_bound": risk_lower_bound(T, sup_cq, size, xi),
        "closed_forms": _closed_forms(problem, params),
    }


def bounds_table(report):
    rows = [("problem", report["problem"]), ("|C|", report["class_size"]),
            ("threshold 1 + log(1/xi)/n", report["threshold"]),
            ("sup |C(q)| (numeric)", report["sup_cq_numeric"]),
            ("sup |C(q)| / |C|", report["sup_ratio"]),
            ("T", report["T"]), ("risk lower bound", report["risk_lower_bound"])]
    for entry in report["closed_forms"]:
        status = "holds" if entry["holds"] else "fails"
        rows.append((f"{entry['name']} [{entry['hypothesis']}: {status}]", entry["value"]))
    return format_table(rows, "Oracle lower bounds")


def chi2_report(problem, d, s_star, beta_star, n, alpha=1.0):
    instance = build_instance(problem, d, s_star, beta_star, alpha)
    report = lecam_report(instance.structure, instance, n)
    return {"problem": normalize_problem(problem), "instance": instance.describe(), **report}


def chi2_table(report):
    return format_table([("chi2", report["chi2"]), ("TV upper bound", report["tv_upper"]),
                         ("Le Cam risk lower bound", report["risk_lower_bound"]), ("n", report["n"])],
                        "Chi-square divergence")


def enumerate_report(kind, d, s_star=None, list_elements=False):
    """Shell table, overlap distribution and optionally the elements of a class."""
    structure = StructureClass.matching(d) if kind == PERFECT_MATCHING else StructureClass.sparse(d, s_star)
    shells = shell_counts(structure)
    report = {"class": structure.describe(), "cardinality": structure.cardinality,
              "shell_counts": [int(c) for c in shells.counts], "shell_total": int(shells.total),
              "overlap_distribution": [float(p) for p in overlap_distribution(structure)]}
    if list_elements:
        if structure.cardinality > LISTING_LIMIT:
            raise ValueError(f"Refusing to list {structure.cardinality} elements; the listing limit is {LISTING_LIMIT}")
        report["elements"] = [S.to_list() for S in enumerate_class(structure)]
    return report


def enumerate_table(report):
    rows = [("cardinality", report["cardinality"])]
    rows += [(f"shell j={j}", c) for j, c in enumerate(report["shell_counts"])]
    rows += [(f"P(Z={z})", p) for z, p in enumerate(report["overlap_distribution"])]
    table = format_table(rows, "Structure class")
    if "elements" in report:
        table += "\n" + "\n".join(" ".join(str(j) for j in e) for e in report["elements"])
    return table


def risk_table(estimate):
    rows = [(k, getattr(estimate, k)) for k in ("setting", "oracle_mode", "trials", "seed", "type1_hat",
                                                "type2_hat", "risk_hat", "ci_halfwidth", "type2_max_hat")]
    return format_table(rows, "Risk estimate")


def game_table(result):
    summary = result.summary()
    rows = [(k, summary[k]) for k in ("setting", "T", "class_size", "sup_cq", "case", "bound",
                                      "exact_risk", "realized_risk", "ci_halfwidth")]
    return format_table(rows, "Adversary game")


def write_phase_svg(frame, path, x_axis="p_beta", y_axis="p_n"):
    """Heat map of regimes over the two swept exponents, one panel per slice."""
    codes = {regime.value: i for i, regime in enumerate(REGIME_ORDER)}
    fixed = [name for name in EXPONENTS if name not in (x_axis, y_axis)]
    slices = list(frame.groupby(fixed, sort=True))
    fig, axes = plt.subplots(1, len(slices), figsize=(4.2 * len(slices), 4.0), squeeze=False)
    cmap = ListedColormap(REGIME_COLORS)
    for ax, (values, part) in zip(axes[0], slices):
        grid = part.assign(code=part["regime"].map(codes)).pivot_table(
            index=y_axis, columns=x_axis, values="code", aggfunc="first")
        ax.pcolormesh(grid.columns.values, grid.index.values, grid.values, cmap=cmap,
                      vmin=-0.5, vmax=len(REGIME_ORDER) - 0.5, shading="nearest")
        ax.set_xlabel(x_axis)
        ax.set_ylabel(y_axis)
        label = ", ".join(f"{name}={value:g}" for name, value in zip(fixed, values))
        ax.set_title(f"{part['problem'].iloc[0]}  {label}")
    handles = [Patch(color=c, label=r.value) for r, c in zip(REGIME_ORDER, REGIME_COLORS)]
    fig.legend(handles=handles, loc="lower center", ncol=len(handles), frameon=False)
    fig.tight_layout(rect=(0, 0.08, 1, 1))
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    log_debug(f"Wrote {path}")


def write_risk_svg(frame, path, parameter):
    """Risk against one swept parameter, one curve per detector setting."""
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for setting, part in frame.groupby("setting", sort=True):
        part = part.sort_values(parameter)
        ax.errorbar(part[parameter], part["risk_hat"], yerr=part["ci_halfwidth"],
                    marker="o", lw=1.8, capsize=3, label=setting)
    ax.axhline(2 * frame["xi"].iloc[0], color="grey", ls="--", lw=1, label=r"$2\xi$")
    ax.set_xlabel(parameter)
    ax.set_ylabel("empirical risk")
    ax.set_ylim(-0.05, 2.05)
    ax.grid(True, alpha=0.25)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    log_debug(f"Wrote {path}")
