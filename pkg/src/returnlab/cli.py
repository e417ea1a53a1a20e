"""Command line runner: ``returnlab {exact,mc,lemmas,scan,dist} --config run.yaml``.

Every run writes long-format CSV tables (and/or JSON mirrors) plus a
``manifest.json`` holding the resolved config, seed, summary and output
checksums.  Passing the manifest back as ``--config`` reruns the experiment.

Exit codes: 0 success, 2 config error, 3 lemma run with only vacuous cells,
4 non-vacuous lemma failure, 5 Monte Carlo discard rate too high.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import distributions as dist
from . import interval_mc as imc
from . import lemma_checks as lc
from . import limits
from .config import OUT_ENV, ConfigError, dump, load_config, parse_range
from .markov_exact import as_word, count_distribution_exact, word_measure

log = logging.getLogger("returnlab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VACUOUS = 3
EXIT_FAILED = 4
EXIT_DISCARD = 5


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _jsonable(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


class Writer:
    """Serialised table writer that records a sha256 for every file."""

    def __init__(self, out_dir: Path, fmt: str):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt
        self.checksums: dict[str, str] = {}

    def _write(self, name: str, text: str) -> None:
        data = text.encode()
        (self.out / name).write_bytes(data)
        self.checksums[name] = hashlib.sha256(data).hexdigest()

    def table(self, name: str, rows: list[dict], columns: list[str] | None = None) -> None:
        rows = [{k: _jsonable(v) for k, v in r.items()} for r in rows]
        if columns is None:
            columns = []
            for r in rows:
                columns += [c for c in r if c not in columns]
        if self.fmt in ("csv", "both"):
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
            w.writeheader()
            for r in rows:
                w.writerow({c: "" if r.get(c) is None else r[c] for c in columns})
            self._write(f"{name}.csv", buf.getvalue())
        if self.fmt in ("json", "both"):
            self._write(f"{name}.json", json.dumps(rows, indent=1, sort_keys=False) + "\n")

    def manifest(self, cfg, started: float, summary: dict, extra: dict | None = None) -> None:
        doc = {
            "version": _version(),
            "subcommand": cfg["subcommand"],
            "config": dump(cfg),
            "seed": cfg["seed"],
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "summary": summary,
            "outputs": dict(sorted(self.checksums.items())),
        }
        doc.update(extra or {})
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=1, default=_jsonable) + "\n")


def run_exact(cfg, writer: Writer, threads: int = 1) -> tuple[int, dict]:
    chain = cfg.chain()
    word = as_word(cfg["target"]["word"])
    K = cfg["K"]
    count_rows, tail_rows, cluster_rows, kac_rows = [], [], [], []
    for L in cfg.grid("L"):
        d = count_distribution_exact(chain, word, L, min(L, K))
        count_rows += [{"L": L, "k": k, "prob": p} for _, k, p in d.rows()]
        tail_rows.append({"L": L, "Kmax": d.Kmax, "tail_mass": d.tail_mass})
        kac = limits.kac_identity_check(chain, word, L)
        kac_rows.append({"L": L, "lhs": kac.lhs, "rhs": kac.rhs, "diff": kac.diff})
        if d.p_hit > 0 and d.Kmax >= 1:
            lam = limits.cluster_law_from_counts(d)
            spec = limits.alpha_spectrum(chain, word, L, K + 1)
            try:
                lam_a = limits.lambda_from_alpha(spec).probs
            except limits.DegenerateError:
                lam_a = np.full(K, np.nan)
            for k in range(1, min(K, lam.K) + 1):
                cluster_rows.append({
                    "L": L, "k": k, "lambda": lam.prob(k), "alpha": float(spec.alpha[k - 1]),
                    "lambda_from_alpha": float(lam_a[k - 1]) if k - 1 < len(lam_a) else None,
                })
    writer.table("counts", count_rows, ["L", "k", "prob"])
    writer.table("count_tails", tail_rows, ["L", "Kmax", "tail_mass"])
    writer.table("clusters", cluster_rows, ["L", "k", "lambda", "alpha", "lambda_from_alpha"])
    writer.table("kac", kac_rows, ["L", "lhs", "rhs", "diff"])
    summary = {"word": str(word), "mu": word_measure(chain, word),
               "max_kac_diff": max(r["diff"] for r in kac_rows)}
    return EXIT_OK, summary


def _family(cfg):
    fam = cfg["target"]["family"]
    depths = parse_range(fam["depths"], "target.family.depths")
    return limits.nested_family(str(fam["base"]), depths, cfg.chain().m)


def run_scan(cfg, writer: Writer, threads: int = 1) -> tuple[int, dict]:
    chain = cfg.chain()
    words = _family(cfg)
    sch_cfg = cfg["schedule"]
    schedule = limits.build_schedule(
        words, sch_cfg["t"], chain, alpha_exp=sch_cfg["alpha_exp"],
        eta=sch_cfg["eta"], omega=sch_cfg["omega"],
    )
    scan = limits.limit_scan(chain, words, cfg.grid("L"), cfg["K"], schedule)
    writer.table("schedule", schedule.rows())
    writer.table("scan", scan.rows, ["n", "L", "k", "lambda", "lambda_hat", "diff", "unreliable"])
    gap = lc.main_theorem_gap(chain, schedule, K=min(cfg["K"], 8))
    writer.table("main_gap", gap.rows)
    summary = {"diagnostic": scan.diagnostic, "flags": schedule.flags, "skipped": gap.skipped}
    return EXIT_OK, summary


def run_mc(cfg, writer: Writer, threads: int = 1) -> tuple[int, dict]:
    mc = cfg["mc"]
    sysm = imc.IntervalSystem(cfg["system"]["map"])
    word = as_word(cfg["target"]["word"])
    N = mc["N"]
    if N == "kac":
        N = max(1, int(math.floor(mc["t"] / imc.cylinder_measure(sysm, word))))
    emp = imc.run_streams(sysm, word, N, mc["samples"], cfg["seed"], mc["streams"], threads, mc["symbolic"])
    rows = [{"k": k, "count": c, "prob": p, "stderr": se} for k, c, p, se in emp.rows()]
    writer.table("mc_counts", rows, ["k", "count", "prob", "stderr"])
    drawn = emp.n_samples + emp.discarded
    rate = emp.discarded / drawn if drawn else 0.0
    summary = {"N": N, "samples": emp.n_samples, "discarded": emp.discarded, "discard_rate": rate,
               "mu": imc.cylinder_measure(sysm, word)}
    if emp.n_samples:
        p_hit = 1.0 - emp.prob(0)
        summary["lambda_hat"] = [emp.prob(k) / p_hit if p_hit > 0 else None for k in range(1, min(len(emp.counts), 6))]
    if rate > mc["max_discard_rate"]:
        log.error("boundary discard rate %.3g exceeds %.3g; aborting", rate, mc["max_discard_rate"])
        return EXIT_DISCARD, summary
    return EXIT_OK, summary


def _lemma_words(cfg) -> list:
    t = cfg["target"]
    if t.get("words"):
        return [as_word(w) for w in t["words"]]
    if t.get("family"):
        return _family(cfg)
    n = cfg.grid("n")
    if n is not None:
        return [as_word(w) for w in lc.default_words(n)]
    return [as_word(t["word"])]


def run_lemmas(cfg, writer: Writer, threads: int = 1) -> tuple[int, dict]:
    chain = cfg.chain()
    lem = cfg["lemmas"]
    words = _lemma_words(cfg)
    windows = cfg.grid("windows", [8, 16, 32, 64])
    ks = cfg.grid("k", "0..4")
    Deltas = cfg.grid("Delta")
    rs = cfg.grid("r", [2, 4, 8])
    Ls = cfg.grid("L", [64, 128, 256])
    gamma, beta = lem["gamma"], lem["beta"]
    reports: list = []
    extra_summary: dict = {}
    for name in lem["which"]:
        if name == "convolution":
            reps = lc.convolution_grid(chain, words, windows, ks, Deltas, lem["mode"], lem["loose"], threads)
        elif name == "galves_schmitt":
            reps = []
            for w in words:
                inst = lc.Instance(chain, w, 2 * max(windows), 0)
                for s in windows:
                    for D in (Deltas or range(inst.n + 1, (s + 1) // 2)):
                        reps.append(lc.galves_schmitt_check(chain, w, s, s, D, inst))
        elif name == "dyadic":
            reps = lc.dyadic_grid(chain, words, Deltas or [16, 32, 64], rs, gamma, threads)
        elif name == "ratio":
            reps = lc.ratio_grid(chain, words, Ls, rs, Deltas or [8, 16, 32], gamma, threads)
        elif name == "k_ratio":
            reps = lc.k_ratio_grid(chain, words, Ls, rs, [k for k in ks if k >= 1] or [1], beta, gamma, threads)
        else:  # gf
            resid, reps = lc.gf_grid(chain, words, windows, cfg["grids"].get("r_max", 6), cfg["K"], threads=threads)
            writer.table("gf_residuals", resid)
            extra_summary["gf_max_residual"] = max((r["residual"] for r in resid), default=0.0)
        if not reps and name != "gf":
            raise ConfigError(f"grids ({name})", "lemma grid is empty")
        writer.table(f"lemma_{name}", [r.row() for r in reps])
        reports += reps
    summary = lc.summarize(reports)
    summary.update(extra_summary)
    failed = sum(s["failed"] for s in summary.values() if isinstance(s, dict))
    decided = sum(s["passed"] + s["failed"] for s in summary.values() if isinstance(s, dict))
    if failed:
        return EXIT_FAILED, summary
    if reports and decided == 0:
        return EXIT_VACUOUS, summary
    return EXIT_OK, summary


def run_dist(cfg, writer: Writer, threads: int = 1) -> tuple[int, dict]:
    d = cfg["dist"]
    t, theta, kmax = float(d["t"]), float(d["theta"]), int(d["kmax"])
    K = max(int(d["cluster_K"]), kmax)
    law = dist.ClusterLaw.geometric(theta, K)
    cp = dist.compound_poisson_pmf_vector(dist.CompoundPoissonParams(t, law), kmax)
    pa = np.array([dist.polya_aeppli_pmf(dist.PolyaAeppliParams(t, theta), k) for k in range(kmax + 1)])
    poisson = dist.compound_poisson_pmf_vector(dist.CompoundPoissonParams(t, dist.ClusterLaw.point()), kmax)
    cbs = {n: dist.compound_binomial_pmf_vector(t / n, n, law, kmax) for n in d["binomial_n"]}
    rows = []
    for k in range(kmax + 1):
        row = {"k": k, "poisson": poisson[k], "compound_poisson": cp[k], "polya_aeppli": pa[k]}
        row.update({f"compound_binomial_n{n}": v[k] for n, v in cbs.items()})
        rows.append(row)
    writer.table("pmf", rows)
    laws = {"compound_poisson": dist.law_from_pmf(cp), "polya_aeppli": dist.law_from_pmf(pa),
            "poisson": dist.law_from_pmf(poisson)}
    laws.update({f"compound_binomial_n{n}": dist.law_from_pmf(v) for n, v in cbs.items()})
    names = list(laws)
    tv_rows = [{"a": a, "b": b, "tv": dist.total_variation(laws[a], laws[b])}
               for i, a in enumerate(names) for b in names[i + 1:]]
    writer.table("tv", tv_rows, ["a", "b", "tv"])
    summary = {"tv_pa_cp": dist.total_variation(laws["polya_aeppli"], laws["compound_poisson"])}
    return EXIT_OK, summary


RUNNERS = {"exact": run_exact, "scan": run_scan, "mc": run_mc, "lemmas": run_lemmas, "dist": run_dist}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="returnlab", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=sorted(RUNNERS))
    p.add_argument("--config", help="YAML config or a previous manifest.json")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./returnlab-out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=["csv", "json", "both"])
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = load_config(args.config, args.subcommand,
                          {"seed": args.seed, "output.format": args.format})
        out = args.out or cfg["output"]["dir"] or os.environ.get(OUT_ENV) or "returnlab-out"
        writer = Writer(Path(out), cfg["output"]["format"])
        code, summary = RUNNERS[args.subcommand](cfg, writer, max(1, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    writer.manifest(cfg, started, summary, {"exit_code": code})
    print(json.dumps({"exit_code": code, "out": str(writer.out), **summary}, default=_jsonable, indent=1))
    return code


if __name__ == "__main__":
    sys.exit(main())
