"""Problem configuration files (INI-style, expression-valued fields).

Sections: [controls], [geometry], [boundary], one [coefficients.<lam>.<mu>]
per control pair (optionally a [coefficients] section with the declared
uniform bound), an optional [derivatives] section registering analytic
derivatives, and an optional [experiment] section with harness settings.
The full schema is documented in docs/config.md.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .expressions import ScalarField, VectorField, base_vars, parse, strip_vars
from .problem import (
    BoundaryData,
    CoefficientEntry,
    CoefficientFamily,
    ControlSet,
    GeometrySpec,
    ThinProblem,
)

__all__ = ["load_problem", "load_experiment_settings", "ConfigError", "ExperimentSettings"]


class ConfigError(ValueError):
    pass


def _split_top(text: str, sep: str) -> list[str]:
    """Split on sep at parenthesis depth zero (expression-safe)."""
    parts = []
    depth = 0
    cur = []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur).strip())
    return [p for p in parts if p]


def _labels(value: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in value.split(",") if p.strip())


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(p) for p in _split_top(value, ","))


@dataclass
class ExperimentSettings:
    eps_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    nx: int = 64
    ny: int = 16
    limit_resolution: int = 64
    tol: float = 1e-10
    max_iter: int = 100


def _read(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    cp.optionxform = str
    read = cp.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    return cp


def load_problem(path: str | Path) -> ThinProblem:
    cp = _read(path)
    for sec in ("controls", "geometry", "boundary"):
        if sec not in cp:
            raise ConfigError(f"missing [{sec}] section")

    min_labels = _labels(cp["controls"]["L"])
    max_labels = _labels(cp["controls"]["M"])
    controls = ControlSet(min_labels, max_labels)

    g = cp["geometry"]
    lower = _floats(g["lower"])
    upper = _floats(g["upper"])
    n = len(lower)
    bvars = base_vars(n)
    svars = strip_vars(n)

    fields: dict[str, object] = {}

    def scalar(name: str, text: str, variables) -> ScalarField:
        try:
            fld = ScalarField(parse(text), variables)
        except Exception as exc:
            raise ConfigError(f"field {name}: {exc}") from exc
        fields[name] = fld
        return fld

    def vector(name: str, text: str, variables) -> VectorField:
        parts = _split_top(text, ",")
        if len(parts) != n:
            raise ConfigError(f"field {name} needs {n} comma-separated expressions")
        comps = [scalar(f"{name}_{i + 1}", p, variables) for i, p in enumerate(parts)]
        return VectorField(comps)

    geom = GeometrySpec(
        n=n,
        lower=lower,
        upper=upper,
        g_minus=scalar("g_minus", g["g_minus"], bvars),
        g_plus=scalar("g_plus", g["g_plus"], bvars),
        epsilon0=float(g.get("epsilon0", "0.25")),
    )

    b = cp["boundary"]
    bdata = BoundaryData(
        gamma0=vector("gamma0", b["gamma0"], bvars),
        beta0=scalar("beta0", b["beta0"], bvars),
        k_plus=vector("k_plus", b["k_plus"], bvars),
        k_minus=vector("k_minus", b["k_minus"], bvars),
        l_plus=scalar("l_plus", b["l_plus"], bvars),
        l_minus=scalar("l_minus", b["l_minus"], bvars),
        beta_lateral=scalar("beta", b["beta"], svars),
        s_candidate=scalar("s", b["s"], bvars),
        h=scalar("h", g["h"], bvars) if "h" in g else None,
    )

    bound = 100.0
    if "coefficients" in cp and "bound" in cp["coefficients"]:
        bound = float(cp["coefficients"]["bound"])
    entries = {}
    for lam in min_labels:
        for mu in max_labels:
            sec = f"coefficients.{lam}.{mu}"
            if sec not in cp:
                raise ConfigError(f"missing [{sec}] section")
            s = cp[sec]
            rows = _split_top(s["sigma"], ";")
            sigma = []
            for i, row in enumerate(rows):
                cells = _split_top(row, ",")
                if len(cells) != n + 1:
                    raise ConfigError(f"[{sec}] sigma rows need {n + 1} columns")
                sigma.append(
                    tuple(scalar(f"sigma[{lam}.{mu}][{i}][{j}]", c, svars) for j, c in enumerate(cells))
                )
            bcells = _split_top(s["b"], ",")
            if len(bcells) != n + 1:
                raise ConfigError(f"[{sec}] b needs {n + 1} entries")
            entries[(lam, mu)] = CoefficientEntry(
                sigma=tuple(sigma),
                b=tuple(scalar(f"b[{lam}.{mu}][{j}]", c, svars) for j, c in enumerate(bcells)),
                c=scalar(f"c[{lam}.{mu}]", s["c"], svars),
                f=scalar(f"f[{lam}.{mu}]", s["f"], svars),
            )

    if "derivatives" in cp:
        for key, text in cp["derivatives"].items():
            parts = key.split("/")
            if len(parts) not in (2, 3):
                raise ConfigError(f"derivative key '{key}' must be field/var or field/var/var")
            name = parts[0].strip()
            variables = tuple(p.strip() for p in parts[1:])
            fld = fields.get(name)
            if fld is None:
                raise ConfigError(f"derivative key '{key}' names unknown field '{name}'")
            fld.expr.register_derivative(variables if len(variables) > 1 else variables[0], text)

    return ThinProblem(
        controls=controls,
        coeffs=CoefficientFamily(entries=entries, bound=bound),
        geom=geom,
        bdata=bdata,
    )


def load_experiment_settings(path: str | Path) -> ExperimentSettings:
    cp = _read(path)
    out = ExperimentSettings()
    if "experiment" not in cp:
        return out
    e = cp["experiment"]
    if "eps" in e:
        out.eps_list = _floats(e["eps"])
    out.nx = int(e.get("nx", out.nx))
    out.ny = int(e.get("ny", out.ny))
    out.limit_resolution = int(e.get("limit_nx", out.limit_resolution))
    out.tol = float(e.get("tol", out.tol))
    out.max_iter = int(e.get("max_iter", out.max_iter))
    return out
