"""Experiment configuration: a small line-oriented ``key = value`` format.

Lines are ``[section]`` headers, ``key = value`` pairs, blank lines or
``#`` comments. Every key must live in a known section and is validated on
parse; errors carry the offending line number. Lists are comma separated and
``start:stop:step`` expands to an inclusive numeric range. Omitted keys take
the defaults in :data:`SCHEMA`, which describe the reference scenario
(N = 2048 tones over 20 MHz, a 128-sample cyclic prefix, 20 paths with a
10-sample rms delay spread).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

from .channel import PowerDelayProfile, allocate_equispaced, coherence_time, kmh
from .ofdm import OfdmConfig
from .protocol import ScenarioConfig, snr_from_db

KINDS = ("correlation", "equivocation", "zeta-pdf", "roc", "impairment-roc")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ----------------------------------------------------------- value parsers


def _real(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(text: str) -> int:
    return int(text, 0)


def _reals(text: str) -> tuple[float, ...]:
    out: list[float] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            raise ValueError("empty list element")
        if ":" in part:
            start, stop, step = (_real(x) for x in part.split(":"))
            if step <= 0 or stop < start:
                raise ValueError(f"bad range {part!r}")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            out.extend(round(start + i * step, 12) for i in range(n))
        else:
            out.append(_real(part))
    return tuple(out)


def _ints(text: str) -> tuple[int, ...]:
    vals = _reals(text)
    if any(v != int(v) for v in vals):
        raise ValueError("expected integers")
    return tuple(int(v) for v in vals)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] = lambda v: True
    rule: str = ""
    unit: str = ""


def _pos(v) -> bool:
    return v > 0


def _nonneg(v) -> bool:
    return v >= 0


def _all(pred) -> Callable[[Any], bool]:
    return lambda vs: len(vs) > 0 and all(pred(v) for v in vs)


SCHEMA: dict[str, dict[str, Key]] = {
    "ofdm": {
        "fft_size": Key(_int, 2048, lambda v: v > 1 and v & (v - 1) == 0, "power of two"),
        "cp_len": Key(_int, 128, _pos, "> 0", "samples"),
        "bandwidth_hz": Key(_real, 20e6, _pos, "> 0", "Hz"),
    },
    "channel": {
        "tau_rms": Key(_real, 10.0, _pos, "> 0", "samples"),
        "num_paths": Key(_int, 20, _pos, ">= 1"),
        "normalization": Key(_choice("per_realization", "expected"), "per_realization"),
        "carrier_hz": Key(_real, 1.9e9, _pos, "> 0", "Hz"),
        "speed_kmh": Key(_real, 50.0, _nonneg, ">= 0", "km/h"),
    },
    "allocation": {
        "delta_ell": Key(_int, 32, _pos, "> 0", "subcarriers"),
        "slots": Key(_int, 1, _pos, ">= 1"),
        "slot_interval_tc": Key(_real, 10.0, _nonneg, ">= 0", "coherence times"),
    },
    "link": {
        "snr_db": Key(_real, 10.0, math.isfinite, "finite", "dB"),
        "beta": Key(_real, 1.5, _nonneg, ">= 0 (inf disables the noise)"),
        "modulation_order": Key(_int, 2, lambda v: v >= 2 and v & (v - 1) == 0, "power of two >= 2"),
    },
    "impairments": {
        "cfo_max": Key(_real, 0.0, lambda v: 0 <= v < 0.5, "in [0, 0.5)", "subcarrier spacings"),
        "sample_offset_max": Key(_int, 0, _nonneg, ">= 0", "samples"),
        "clock_offset_ppm_max": Key(_real, 0.0, lambda v: 0 <= v <= 200, "in [0, 200]", "ppm"),
    },
    "verify": {
        "search_points": Key(_int, 0, _nonneg, ">= 0"),
        "target_pf": Key(_real, 1e-2, lambda v: 0 < v <= 1, "in (0, 1]"),
    },
    "run": {
        "trials": Key(_int, 10_000, _pos, ">= 1"),
        "seed": Key(_int, 0, lambda v: 0 <= v < 2**64, "unsigned 64-bit"),
    },
    "sweep": {
        "beta": Key(_reals, (0.5, 1.5, 3.0), _all(_nonneg), "values >= 0"),
        "snr_db": Key(_reals, (10.0,), _all(math.isfinite), "finite values", "dB"),
        "delta_ell": Key(_ints, (32, 64, 128), _all(_pos), "values > 0", "subcarriers"),
        "modulation_order": Key(_ints, (2,), _all(lambda v: v >= 2 and v & (v - 1) == 0), "powers of two"),
        "search_points": Key(_ints, (40, 200), _all(_pos), "values >= 1"),
        "equivocation_beta": Key(_reals, _reals("0:5:0.25"), _all(_nonneg), "values >= 0"),
        "equivocation_m": Key(_ints, (2, 4), _all(lambda v: v >= 2 and v & (v - 1) == 0), "powers of two"),
    },
}


@dataclass(frozen=True)
class ExperimentSpec:
    """Resolved configuration: the raw section values plus the scenario built from them."""

    values: dict[str, dict[str, Any]]
    kind: str | None = None
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def trials(self) -> int:
        return self.values["run"]["trials"]

    @property
    def coherence_time(self) -> float:
        ch = self.values["channel"]
        return coherence_time(ch["carrier_hz"], kmh(ch["speed_kmh"]))

    def with_overrides(self, kind: str | None = None, seed: int | None = None, trials: int | None = None):
        values = {s: dict(kv) for s, kv in self.values.items()}
        if seed is not None:
            _validate("run", "seed", seed, None)
            values["run"]["seed"] = seed
        if trials is not None:
            _validate("run", "trials", trials, None)
            values["run"]["trials"] = trials
        return build_spec(values, kind or self.kind)

    def manifest(self) -> dict:
        sc = self.scenario
        values = {s: {k: _jsonable(v) for k, v in kv.items()} for s, kv in self.values.items()}
        tc = self.coherence_time
        return {
            "kind": self.kind,
            "config": values,
            "derived": {
                "per_slot_count": sc.plan.per_slot_count,
                "slots": sc.plan.slots,
                "key_length": sc.key_length,
                "snr_linear": sc.snr,
                "omega_max": sc.omega_max,
                "coherence_time_s": _jsonable(tc),
                "slot_interval_s": _jsonable(sc.plan.slot_interval),
                "symbol_duration_s": sc.ofdm.symbol_duration,
            },
        }


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _validate(section: str, key: str, value, line: int | None) -> None:
    spec = SCHEMA[section][key]
    if not spec.check(value):
        raise ConfigError(f"{section}.{key} = {value!r} violates {spec.rule}", line)


def defaults() -> dict[str, dict[str, Any]]:
    return {s: {k: v.default for k, v in keys.items()} for s, keys in SCHEMA.items()}


def parse_values(text: str) -> dict[str, dict[str, Any]]:
    values = defaults()
    seen: set[tuple[str, str]] = set()
    section: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, text_value = (p.strip() for p in line.split("=", 1))
        if section is None:
            raise ConfigError(f"key {key!r} appears before any [section]", lineno)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {section}.{key}", lineno)
        seen.add((section, key))
        try:
            value = SCHEMA[section][key].parse(text_value)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {section}.{key} = {text_value!r}: {exc}", lineno) from None
        _validate(section, key, value, lineno)
        values[section][key] = value
    return values


def build_scenario(values: dict[str, dict[str, Any]]) -> ScenarioConfig:
    o, ch, al = values["ofdm"], values["channel"], values["allocation"]
    ln, im, vf, rn = values["link"], values["impairments"], values["verify"], values["run"]
    try:
        ofdm = OfdmConfig(o["fft_size"], o["cp_len"], o["bandwidth_hz"])
        tc = coherence_time(ch["carrier_hz"], kmh(ch["speed_kmh"]))
        interval = al["slot_interval_tc"] * tc if al["slots"] > 1 else 0.0
        plan = allocate_equispaced(ofdm.fft_size, al["delta_ell"], al["slots"], interval)
        pdp = PowerDelayProfile(ch["tau_rms"], ch["num_paths"], ofdm.cp_len, ch["normalization"])
        return ScenarioConfig(
            ofdm=ofdm,
            plan=plan,
            pdp=pdp,
            snr=snr_from_db(ln["snr_db"]),
            beta=ln["beta"],
            modulation_order=ln["modulation_order"],
            cfo_max=im["cfo_max"],
            sample_offset_max=im["sample_offset_max"],
            clock_offset_ppm_max=im["clock_offset_ppm_max"],
            search_points=vf["search_points"],
            trials=rn["trials"],
            seed=rn["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_spec(values: dict[str, dict[str, Any]], kind: str | None = None) -> ExperimentSpec:
    if kind is not None and kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    return ExperimentSpec(values, kind, build_scenario(values))


def parse_config(text: str, kind: str | None = None) -> ExperimentSpec:
    return build_spec(parse_values(text), kind)


def load_config(path, kind: str | None = None) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), kind)


def schema_table() -> str:
    """Plain-text listing of every section, key, default and rule."""
    rows = []
    for section, keys in SCHEMA.items():
        rows.append(f"[{section}]")
        for k, spec in keys.items():
            default = spec.default
            if isinstance(default, tuple) and len(default) > 6:
                default = f"{default[0]}..{default[-1]} ({len(default)} values)"
            unit = f" [{spec.unit}]" if spec.unit else ""
            rule = f"  ({spec.rule})" if spec.rule else ""
            rows.append(f"  {k} = {default}{unit}{rule}")
    return "\n".join(rows)

