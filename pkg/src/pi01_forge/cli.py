"""Command line front end: ``pi01-forge``.

Exit codes: 0 success, 2 soft relaxed-schedule violation, 3 hard error.
Artifacts are written to ``--out`` together with ``manifest.json`` whose
hash chain binds every artifact to the ones it was built from.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import logic
from .errors import ForgeError, MissingArtifact, RelaxedViolation
from .schedule import (ScheduleConfig, build_schedule, check_requirements, compare_alpha,
                       parse_overrides, schedule_from_json, schedule_to_json, toy_config)

EXIT_OK, EXIT_SOFT, EXIT_HARD = 0, 2, 3
MANIFEST = "manifest.json"
ARTIFACT_INPUTS = {
    "schedule.json": [],
    "words.json": ["schedule.json"],
    "circular.json": ["words.json", "schedule.json"],
    "diffeo.json": ["words.json", "schedule.json"],
}


class Ctx:
    def __init__(self, mode, seed, stages, out, sentence, sentence_index, overrides, kmax):
        self.mode = mode
        self.seed = seed
        self.stages = stages
        self.out = Path(out)
        self.sentence_text = sentence
        self.N = sentence_index or 1
        self.overrides = parse_overrides(overrides)
        self.kmax = kmax
        self.soft = []
        self._sentence_from_index = sentence is None and sentence_index is not None

    # -- inputs

    def sentence(self) -> logic.Pi01Sentence:
        if self.sentence_text is not None:
            return logic.classify_pi01(logic.parse(self.sentence_text))
        if self._sentence_from_index:
            return logic.classify_pi01(logic.decode(self.N))
        raise click.UsageError("give --sentence or --sentence-index")

    def config(self) -> ScheduleConfig:
        if self.mode == "strict":
            return ScheduleConfig(mode="strict", N=self.N, overrides=self.overrides)
        base = toy_config(self.N, self.kmax)
        ov = dict(base.overrides)
        ov.update(dict(self.overrides))
        return ScheduleConfig(mode="relaxed", N=self.N, P0=base.P0, kmax=self.kmax,
                              overrides=tuple(sorted(ov.items())))

    # -- artifacts

    def path(self, name: str) -> Path:
        return self.out / name

    def write(self, name: str, doc) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        text = doc if isinstance(doc, str) else json.dumps(doc, sort_keys=True, indent=1)
        self.path(name).write_text(text if text.endswith("\n") else text + "\n")

    def read(self, name: str):
        p = self.path(name)
        if not p.exists():
            raise MissingArtifact(f"{p} not found; run the producing subcommand first")
        text = p.read_text()
        return text if name.endswith(".txt") else json.loads(text)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _chain(ctx: Ctx, names) -> dict:
    """Per-artifact hash plus a link hash over its inputs' link hashes."""
    out = {}
    for name in names:
        if not ctx.path(name).exists():
            continue
        h = _sha(ctx.path(name))
        parents = [out[p]["link"] for p in ARTIFACT_INPUTS.get(name, []) if p in out]
        link = hashlib.sha256("|".join([name, h] + parents).encode()).hexdigest()
        out[name] = {"sha256": h, "inputs": ARTIFACT_INPUTS.get(name, []), "link": link}
    return out


def _write_manifest(ctx: Ctx, sent, sched, omega_hit, spec_summary=None):
    logic_code = sent.code.value if sent is not None and sent.code is not None else None
    manifest = {
        "schema": "pi01-forge/manifest/1",
        "sentence": None if sent is None else logic.to_text(sent.formula()),
        "goedel": None if logic_code is None else str(logic_code),
        "N": ctx.N, "mode": ctx.mode, "seed": ctx.seed, "stages": ctx.stages,
        "omega_hit": omega_hit,
        "audit": {"failed": sched.failed(),
                  "statuses": _count(r.status for r in sched.audits)},
        "specs": spec_summary or {},
        "artifacts": _chain(ctx, ARTIFACT_INPUTS),
    }
    ctx.write(MANIFEST, manifest)
    return manifest


def _count(items) -> dict:
    out: dict = {}
    for x in items:
        out[x] = out.get(x, 0) + 1
    return dict(sorted(out.items()))


def _soft_audit(ctx: Ctx, sched) -> None:
    failed = sched.failed()
    if failed:
        if sched.mode == "strict":
            raise ForgeError("strict schedule failed audits: " + ", ".join(failed))
        ctx.soft.append(RelaxedViolation(failed))


def _load_schedule(ctx: Ctx):
    if ctx.path("schedule.json").exists():
        return schedule_from_json(ctx.path("schedule.json").read_text())
    return build_schedule(ctx.config(), ctx.stages)


def _load_words(ctx: Ctx):
    from .odometer_words import stage_from_json
    return stage_from_json(ctx.read("words.json"))


def _apply_thread_cap():
    cap = os.environ.get("PI01_FORGE_THREADS")
    if cap:
        try:
            import numba
            numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
        except (ValueError, ImportError):
            pass


# ---------------------------------------------------------------- group

@click.group()
@click.option("--mode", type=click.Choice(["relaxed", "strict"]), default="relaxed")
@click.option("--seed", type=int, default=0)
@click.option("--stages", type=int, default=2)
@click.option("--out", type=click.Path(file_okay=False), default="forge-out")
@click.option("--sentence", type=str, default=None)
@click.option("--sentence-index", type=int, default=None,
              help="Schedule index N; also decoded as a sentence code when no --sentence.")
@click.option("--override", "overrides", multiple=True, help="key=value or key_n=value")
@click.option("--kmax", type=int, default=4, help="Relaxed kmax (stage word blocks).")
@click.pass_context
def main(cx, mode, seed, stages, out, sentence, sentence_index, overrides, kmax):
    """Build and check the stagewise construction for a universal arithmetic sentence."""
    _apply_thread_cap()
    cx.obj = Ctx(mode, seed, stages, out, sentence, sentence_index, overrides, kmax)


@main.command()
@click.argument("text")
def encode(text):
    """Print the prime-power code of a formula."""
    click.echo(logic.encode(logic.parse(text)).value)


@main.command()
@click.argument("code", type=int)
def decode(code):
    """Print the formula with the given code."""
    click.echo(logic.to_text(logic.decode(code)))


@main.command()
@click.pass_obj
def schedule(ctx: Ctx):
    """Build the parameter schedule and its audits."""
    sched = build_schedule(ctx.config(), ctx.stages)
    ctx.write("schedule.json", schedule_to_json(sched))
    for st in sched.stages:
        click.echo(f"n={st.n} s={st.s_n} k={_fmt(st.k_n)} l={st.l_n} q={_fmt(st.q_n)} "
                   f"p={_fmt(st.p_n)} alpha={_fmt(st.alpha_n)} eps={_fmt(st.eps_n)}")
    click.echo(f"audits: {_count(r.status for r in sched.audits)}")
    for f in sched.failed():
        click.echo(f"  fail {f}")
    _soft_audit(ctx, sched)


def _fmt(v) -> str:
    s = str(v)
    return s if len(s) <= 40 else f"<{len(s)} digits>"


@main.command("build-words")
@click.pass_obj
def build_words(ctx: Ctx):
    """Run the word construction for the sentence."""
    from .odometer_words import run_Rphi, stage_to_json
    sched = _load_schedule(ctx)
    if not ctx.path("schedule.json").exists():
        ctx.write("schedule.json", schedule_to_json(sched))
    res = run_Rphi(ctx.sentence(), ctx.stages, sched, ctx.seed)
    ctx.write("words.json", stage_to_json(res["stages"][-1]))
    click.echo(f"stages={ctx.stages} omega_hit={res['omega_hit']}")
    _soft_audit(ctx, sched)


def _spec_reports(ctx: Ctx, stage, sched, spec=None):
    from .odometer_words import check_specs, strong_uniformity
    rows = []
    for st in stage.chain()[1:]:
        eps = sched.stages[st.n - 1].eps_n
        if spec in (None, "uniformity"):
            ok, wit = strong_uniformity(st)
            rows.append({"stage": st.n, "spec": "uniformity", "passed": bool(ok),
                         "worst": 0 if ok else 1, "threshold": "exact",
                         "witness": None if ok else str(wit)})
        for r in check_specs(st, eps, None if spec in (None, "uniformity") else spec):
            rows.append({"stage": st.n, "spec": r.spec_id, "passed": bool(r.passed),
                         "worst": str(r.worst_deviation), "threshold": str(r.threshold),
                         "witness": None if r.passed else str(r.counterexample)})
    return rows


def _letters_report(doc, stage):
    """Compare stored letters with the index-derived ones and rescan them."""
    from .odometer_words import check_unique_readability
    if "words" not in doc:
        return []
    stored = doc["words"]
    built = [w.letters for w in stage.words()]
    rows = []
    for w, (a, b) in enumerate(zip(stored, built)):
        if a != b:
            pos = next(i for i, (x, y) in enumerate(zip(a, b)) if x != y)
            rows.append({"stage": stage.n, "spec": "letters", "passed": False, "worst": 1,
                         "threshold": "exact", "witness": f"word {w} position {pos}"})
    if rows:
        ok, wit = check_unique_readability(stored)
        rows.append({"stage": stage.n, "spec": "UR(letters)", "passed": bool(ok),
                     "worst": 0 if ok else 1, "threshold": "exact",
                     "witness": None if ok else f"{wit[0][:16]}..|{wit[1][:16]}.. offset {wit[2]}"})
    return rows


def _verify_manifest(ctx: Ctx) -> list[str]:
    if not ctx.path(MANIFEST).exists():
        return []
    man = ctx.read(MANIFEST)
    now = _chain(ctx, ARTIFACT_INPUTS)
    bad = []
    for name, rec in man.get("artifacts", {}).items():
        if name not in now:
            bad.append(f"{name}: missing")
        elif now[name]["sha256"] != rec["sha256"]:
            bad.append(f"{name}: content changed since the manifest was written")
        elif now[name]["link"] != rec["link"]:
            bad.append(f"{name}: an input changed since the manifest was written")
    return bad


@main.command("check-specs")
@click.option("--spec", type=str, default=None, help="Q4, Q6, J10.1, J11, J11.1, UR or uniformity")
@click.option("--json-out", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def check_specs_cmd(ctx: Ctx, spec, json_out):
    """Re-run spec checks and schedule audits on the artifacts."""
    doc = ctx.read("words.json")
    from .odometer_words import stage_from_json
    stage = stage_from_json(doc)
    sched = _load_schedule(ctx)
    bad_hashes = _verify_manifest(ctx)
    rows = _letters_report(doc, stage) + _spec_reports(ctx, stage, sched, spec)
    audits = [{"id": r.id, "stage": r.stage, "status": r.status} for r in check_requirements(sched)]
    report = {"specs": rows, "audits": audits, "manifest": bad_hashes}
    if json_out:
        Path(json_out).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    for r in rows:
        verdict = "PASS" if r["passed"] else "FAIL"
        extra = "" if r["passed"] else f"  <- {r['witness']}"
        click.echo(f"stage {r['stage']:>2} {r['spec']:<11} {verdict} worst={r['worst']}{extra}")
    click.echo(f"audits: {_count(a['status'] for a in audits)}")
    for b in bad_hashes:
        click.echo(f"manifest: {b}")
    if bad_hashes or any(not r["passed"] and r["spec"] not in ("J10.1", "J11.1") for r in rows):
        raise ForgeError("artifact check failed")
    _soft_audit(ctx, sched)


@main.command("lift-circular")
@click.pass_obj
def lift_circular(ctx: Ctx):
    """Lift the word chain through the C-operator."""
    from .circular import check_lift, circ_to_json, lift_chain
    sched = _load_schedule(ctx)
    circ = lift_chain(_load_words(ctx), sched)
    ctx.write("circular.json", circ_to_json(circ))
    for st in circ.chain():
        rep = check_lift(st)
        click.echo(f"stage {st.n} q={_fmt(st.q)} p={_fmt(st.p)} length_law={rep['length_law']} "
                   f"injective={rep['injective']} ur={rep['ur']}")


@main.command("build-diffeo")
@click.option("--eps", type=str, default="1/10")
@click.option("--grid", type=int, default=32)
@click.pass_obj
def build_diffeo(ctx: Ctx, eps, grid):
    """Emit the torus map code for the built words."""
    _emit_and_write(ctx, eps, grid, _load_words(ctx).chain())


def _emit_and_write(ctx: Ctx, eps, grid, chain):
    from .schedule import schedule_to_json
    from .torus import code_to_json, emit_code
    sched = _load_schedule(ctx)
    code = emit_code(ctx.N, len(chain) - 1, sched, ctx.seed, eps=Fraction(eps), grid=grid,
                     words=chain)
    doc = code_to_json(code)
    doc["schedule_sha256"] = hashlib.sha256(schedule_to_json(code.schedule).encode()).hexdigest()
    ctx.write("diffeo.json", doc)
    for g in code.gates:
        click.echo(f"gate m={g['m']} l={g['l']} estimate={float(g['estimate']):.4g} "
                   f"< {g['threshold']}")
    return code


def _load_code(ctx: Ctx):
    from .torus import code_from_json
    return code_from_json(ctx.read("diffeo.json"))


@main.command("modulus")
@click.option("--k", "k", type=int, default=0)
@click.option("--n", "n", type=int, required=True)
@click.pass_obj
def modulus_cmd(ctx: Ctx, k, n):
    """Input precision d(k, n) of the emitted code."""
    from .torus import modulus
    click.echo(modulus(_load_code(ctx), k, n))


@main.command("eval")
@click.option("--point", type=str, required=True, help="x,y as decimals or fractions")
@click.option("--n", "n", type=int, default=8)
@click.option("--k", "k", type=int, default=0)
@click.pass_obj
def eval_cmd(ctx: Ctx, point, n, k):
    """Evaluate the code at a point to n output bits."""
    from .torus import DyadicPoint, approx, modulus
    code = _load_code(ctx)
    x, y = (Fraction(v) for v in point.split(","))
    d = modulus(code, k, n)
    out = approx(code, k, DyadicPoint.from_fractions(x, y, d), n)
    if k == 0:
        fx, fy = out.as_fractions()
        click.echo(f"{out.x_bits} {out.y_bits} ({fx}, {fy}) input_bits={d}")
    else:
        click.echo(json.dumps([str(v) for v in np.ravel(out)]))


@main.command("render-grid")
@click.option("--size", type=int, default=64)
@click.pass_obj
def render_grid(ctx: Ctx, size):
    """CSV of (x, y, Sx, Sy) and a PGM displacement map."""
    code = _load_code(ctx)
    S = code.evaluator()
    g = (np.arange(size) + 0.5) / size
    X, Y = np.meshgrid(g, g)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    out = S(pts)
    lines = ["x,y,Sx,Sy"] + [f"{a:.12g},{b:.12g},{c:.12g},{d:.12g}"
                             for (a, b), (c, d) in zip(pts, out)]
    ctx.write("grid.csv", "\n".join(lines))
    disp = np.sqrt((((out - pts) + 0.5) % 1.0 - 0.5) ** 2).sum(axis=1)
    top = disp.max() or 1.0
    pix = np.round(255 * disp / top).astype(np.uint8).reshape(size, size)[::-1]
    ctx.out.mkdir(parents=True, exist_ok=True)
    with open(ctx.path("grid.pgm"), "wb") as fh:
        fh.write(f"P5\n{size} {size}\n255\n".encode())
        fh.write(pix.tobytes())
    click.echo(f"wrote {size * size} rows to {ctx.path('grid.csv')}")


@main.command("compare-alpha")
@click.option("--other", "M", type=int, required=True, help="Second index M < N")
@click.option("--at", "n", type=int, default=None, help="Stage used for the comparison")
@click.pass_obj
def compare_alpha_cmd(ctx: Ctx, M, n):
    """Certify alpha(N) < alpha(M)."""
    a = build_schedule(ctx.config(), ctx.stages)
    other = Ctx(ctx.mode, ctx.seed, ctx.stages, ctx.out, None, M,
                [f"{k}={v}" for k, v in ctx.overrides], ctx.kmax)
    b = build_schedule(other.config(), ctx.stages)
    res = compare_alpha(a, b, ctx.stages - 2 if n is None else n)
    click.echo(f"{res.result} via {res.method}: {res.witness}")


@main.command()
@click.option("--eps", type=str, default="1/10")
@click.option("--grid", type=int, default=32)
@click.option("--diffeo/--no-diffeo", default=True)
@click.pass_obj
def pipeline(ctx: Ctx, eps, grid, diffeo):
    """Run everything and write the manifest."""
    from .circular import check_lift, circ_to_json, lift_chain
    from .odometer_words import run_Rphi, stage_to_json
    sent = ctx.sentence()
    sched = build_schedule(ctx.config(), ctx.stages)
    res = run_Rphi(sent, ctx.stages, sched, ctx.seed)
    chain = res["stages"]
    if diffeo:
        ctx.write("schedule.json", schedule_to_json(sched))
        code = _emit_and_write(ctx, eps, grid, chain)
        sched = code.schedule
    ctx.write("schedule.json", schedule_to_json(sched))
    ctx.write("words.json", stage_to_json(chain[-1]))
    circ = lift_chain(chain[-1], sched)
    ctx.write("circular.json", circ_to_json(circ))
    if diffeo:
        # rewrite after the final schedule so the schedule reference matches
        doc = ctx.read("diffeo.json")
        doc["schedule_sha256"] = _sha(ctx.path("schedule.json"))
        ctx.write("diffeo.json", doc)
    rows = _spec_reports(ctx, chain[-1], sched)
    lifts = [check_lift(st) for st in circ.chain()]
    summary = {"passed": sum(r["passed"] for r in rows), "failed": [
        f"{r['spec']}@{r['stage']}" for r in rows if not r["passed"]],
        "lift_length_law": all(r["length_law"] for r in lifts)}
    man = _write_manifest(ctx, sent, sched, res["omega_hit"], summary)
    click.echo(f"omega_hit={man['omega_hit']} specs passed={summary['passed']} "
               f"failed={summary['failed']}")
    click.echo(f"manifest: {ctx.path(MANIFEST)}")
    _soft_audit(ctx, sched)


def run(argv=None) -> int:
    """Entry point with the stable exit-code contract."""
    try:
        cx = main.make_context("pi01-forge", list(sys.argv[1:] if argv is None else argv))
        with cx:
            main.invoke(cx)
        ctx = cx.obj
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return EXIT_HARD
    except click.exceptions.Abort:
        return EXIT_HARD
    except RelaxedViolation as e:
        click.echo(f"warning [schedule]: {e}", err=True)
        return EXIT_SOFT
    except ForgeError as e:
        click.echo(f"error [{e.module}]: {e}", err=True)
        return EXIT_HARD
    if ctx is not None and ctx.soft:
        for w in ctx.soft:
            click.echo(f"warning [schedule]: {w}", err=True)
        return EXIT_SOFT
    return EXIT_OK


def entry() -> None:
    sys.exit(run())


if __name__ == "__main__":
    entry()
