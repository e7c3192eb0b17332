"""Command-line pipeline: pretrain -> train-score -> sample -> eval.

Every stage reads and writes files in the output directory and appends rows
to the metric ledger ``metrics.csv``. A stage whose inputs (config and
upstream artifacts) are unchanged since its last successful run is skipped
unless ``--force`` is given.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from ._random import child_seed
from .config import load_config
from .datagen import (
    SampleBatch, ShiftSpec, TargetSpec, read_batch_csv, sample_pretrain, sample_target,
    write_batch_csv,
)
from .exceptions import BridgeGenError, NumericError, ShapeError
from .metrics import append_ledger, summary, w2_exact, w2_sliced, MAX_EXACT
from .nn import AdamHyper
from .pretrain import (
    decode_batch, encode_batch, load_pair, outside_cube_fraction, pretrain, save_pair,
)
from .sampler import DiffusionSchedule, derive_schedule, run_chains, truncate
from .score import (
    ConvolutionDensity, OracleScore, ZeroScore, load_score_model, midpoint_grid,
    save_score_model, score_l2_error, train_score,
)

log = logging.getLogger("bridgegen")

# spawn keys for the per-purpose seeds derived from the run seed
_TARGET, _PRETRAIN_DATA, _PRETRAIN_FIT, _SCORE_FIT, _SAMPLE, _REFERENCE, _SLICES, _SCORE_EVAL = range(1, 9)

EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def git_hash(path):
    """Git blob hash of a file's contents."""
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class Run:
    """Output directory, ledger and stage bookkeeping for one config."""

    def __init__(self, cfg, force=False):
        self.cfg = cfg
        self.force = force
        self.out = cfg.run.output_dir
        os.makedirs(self.out, exist_ok=True)
        self.run_id = cfg.run_id()
        self.ledger = os.path.join(self.out, "metrics.csv")
        self._state_path = os.path.join(self.out, "stages.json")
        self.manifest_path = os.path.join(self.out, "run_manifest.json")

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    def seed(self, purpose):
        return child_seed(self.cfg.seed, purpose)

    def _state(self):
        if os.path.exists(self._state_path):
            with open(self._state_path) as fh:
                return json.load(fh)
        return {}

    def stage_key(self, stage, inputs=(), extra=None):
        h = hashlib.sha256(f"{self.run_id}:{stage}:{json.dumps(extra, sort_keys=True)}".encode())
        for p in inputs:
            h.update(git_hash(p).encode())
        return h.hexdigest()

    def is_current(self, stage, key):
        if self.force:
            return False
        entry = self._state().get(stage)
        return bool(entry and entry["key"] == key
                    and all(os.path.exists(p) for p in entry["outputs"]))

    def complete(self, stage, key, outputs, seconds):
        state = self._state()
        state[stage] = {"key": key, "outputs": list(outputs)}
        with open(self._state_path, "w") as fh:
            json.dump(state, fh, indent=2, sort_keys=True)
        manifest = self._manifest()
        manifest["config"] = self.cfg.canonical()
        manifest["run_id"] = self.run_id
        manifest.setdefault("artifacts", {})[stage] = list(outputs)
        manifest.setdefault("timings", {})[stage] = seconds
        manifest["hashes"] = {os.path.relpath(p, self.out): git_hash(p)
                              for paths in manifest["artifacts"].values() for p in paths
                              if p.endswith(".json") and os.path.exists(p)}
        with open(self.manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    def _manifest(self):
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path) as fh:
                return json.load(fh)
        return {}

    def record(self, stage, rows):
        append_ledger(self.ledger, [(self.run_id, stage, name, value, n, self.cfg.seed)
                                    for name, value, n in rows])

    # shared data and models

    def target_spec(self):
        t = self.cfg.target
        return TargetSpec(t.kind, t.d, t.d_star if t.kind == "embedded_manifold" else None,
                          centers=np.array(t.centers) if t.centers else None, std=t.std,
                          embedding_seed=t.embedding_seed)

    def latent_dim(self):
        return self.cfg.target.d_star

    def sampling_T(self):
        return self.schedule().T

    def training_T(self):
        return self.cfg.score.T if self.cfg.score.T is not None else self.sampling_T()

    def schedule(self, T=None):
        """Configured (or derived) schedule; with ``T`` given, rescale K to keep T/K fixed."""
        sch = self.cfg.schedule
        if sch.use_derived_schedule:
            base = derive_schedule(self.cfg.sizes.n, self.latent_dim(), sch.beta, sch.sigma,
                                   sch.K, sch.L, sch.noise_scale)
        else:
            base = DiffusionSchedule(sch.sigma, sch.K, sch.T, sch.L, sch.noise_scale)
        if T is None or T == base.T:
            return base
        K = max(1, int(round(base.K * T / base.T)))
        return DiffusionSchedule(sch.sigma, K, T, base.L, sch.noise_scale)

    def load_score(self, score_dir):
        with open(os.path.join(score_dir, "score_manifest.json")) as fh:
            meta = json.load(fh)
        if meta.get("kind") == "oracle":
            latent = read_batch_csv(self.path("latent.csv"))
            return OracleScore(ConvolutionDensity(latent.points, meta["sigma"]))
        return load_score_model(score_dir)


def _timed(run, stage, key, fn):
    start = time.perf_counter()
    try:
        outputs = fn()
    except BridgeGenError as exc:
        raise StageError(stage, exc) from exc
    run.complete(stage, key, outputs, time.perf_counter() - start)
    log.info("stage %s done", stage)
    return outputs


def cmd_pretrain(run):
    cfg = run.cfg
    key = run.stage_key("pretrain")
    if run.is_current("pretrain", key):
        log.info("pretrain is up to date")
        return
    pair_dir = run.path("pair")

    def body():
        spec = run.target_spec()
        data = sample_pretrain(spec, ShiftSpec(cfg.target.shift), cfg.sizes.M,
                               run.seed(_PRETRAIN_DATA))
        p = cfg.pretrain
        d, k = cfg.target.d, run.latent_dim()
        pair = pretrain((d, *p.encoder_hidden, k), (k, *p.decoder_hidden, d), data,
                        epochs=p.epochs, batch_size=p.batch_size, hyper=AdamHyper(lr=p.lr),
                        seed=run.seed(_PRETRAIN_FIT))
        paths = save_pair(pair, pair_dir)
        loss_csv = run.path("pretrain_loss.csv")
        with open(loss_csv, "w") as fh:
            fh.write("epoch,loss\n")
            for epoch, loss in pair.loss_history:
                fh.write(f"{epoch},{loss!r}\n")
        gamma_e, gamma_d = pair.lipschitz_estimates
        run.record("pretrain", [("initial_recon_loss", pair.initial_loss, cfg.sizes.M),
                                ("final_recon_loss", pair.final_loss, cfg.sizes.M),
                                ("gamma_E_hat", gamma_e, cfg.sizes.M),
                                ("gamma_D_hat", gamma_d, cfg.sizes.M)])
        return [paths["encoder"], paths["decoder"], paths["manifest"], loss_csv]

    _timed(run, "pretrain", key, body)


def cmd_train_score(run, pair_dir=None, oracle=False):
    cfg = run.cfg
    pair_dir = pair_dir or run.path("pair")
    pair_files = [os.path.join(pair_dir, f) for f in ("encoder.json", "decoder.json")]
    key = run.stage_key("train-score", pair_files if all(map(os.path.exists, pair_files)) else (),
                        {"oracle": oracle})
    if run.is_current("train-score", key):
        log.info("train-score is up to date")
        return
    score_dir = run.path("score")

    def body():
        pair = load_pair(pair_dir)
        target = sample_target(run.target_spec(), cfg.sizes.n, run.seed(_TARGET))
        latent = encode_batch(pair, target)
        latent_csv = run.path("latent.csv")
        write_batch_csv(latent, latent_csv)
        sigma = cfg.schedule.sigma
        T = run.training_T()
        cd = ConvolutionDensity(latent.points, sigma)
        grid = midpoint_grid(T, 16)
        n = cfg.sizes.n
        rows = [("latent_outside_cube_fraction", outside_cube_fraction(latent), n)]
        os.makedirs(score_dir, exist_ok=True)
        if oracle:
            model = OracleScore(cd)
            manifest = os.path.join(score_dir, "score_manifest.json")
            for stale in ("score_model.json",):
                if os.path.exists(os.path.join(score_dir, stale)):
                    os.remove(os.path.join(score_dir, stale))
            with open(manifest, "w") as fh:
                json.dump({"kind": "oracle", "sigma": sigma, "T": T, "n": n,
                           "seed": cfg.seed}, fh, indent=2, sort_keys=True)
            outputs = [latent_csv, manifest]
        else:
            sc = cfg.score
            model = train_score(latent, sc.hidden, sigma, T, steps=sc.steps,
                                batch_size=sc.batch_size, hyper=AdamHyper(lr=sc.lr),
                                seed=run.seed(_SCORE_FIT))
            paths = save_score_model(model, score_dir)
            rows.append(("final_dsm_loss", model.final_dsm_loss, n))
            outputs = [latent_csv, paths["model"], paths["manifest"]]
        eval_seed = run.seed(_SCORE_EVAL)
        rows.append(("score_l2_error", score_l2_error(model, cd, grid, 256, eval_seed), n))
        rows.append(("score_l2_error_zero",
                     score_l2_error(ZeroScore(cd.dim), cd, grid, 256, eval_seed), n))
        run.record("train-score", rows)
        return outputs

    _timed(run, "train-score", key, body)


def _sample_into(run, pair, latent, score, schedule, stem):
    """Run chains, write ``<stem>.csv`` (decoded endpoints) and ``<stem>_initial.csv``."""
    count = run.cfg.sizes.chains
    seed = run.seed(_SAMPLE)
    ends, starts = run_chains(latent, score, schedule, count, seed, return_initial=True)
    kept = truncate(ends, schedule.L) if count else ends
    truncated = float(np.mean(np.any(np.abs(ends) > schedule.L, axis=1))) if count else 0.0
    gen = decode_batch(pair, SampleBatch(kept, "latent", seed))
    init = decode_batch(pair, SampleBatch(starts, "latent", seed))
    gen_path, init_path = run.path(f"{stem}.csv"), run.path(f"{stem}_initial.csv")
    write_batch_csv(gen, gen_path)
    write_batch_csv(init, init_path)
    return gen_path, init_path, truncated


def cmd_sample(run, pair_dir=None, score_dir=None):
    cfg = run.cfg
    pair_dir = pair_dir or run.path("pair")
    score_dir = score_dir or run.path("score")
    inputs = [os.path.join(pair_dir, "decoder.json"), run.path("latent.csv"),
              os.path.join(score_dir, "score_manifest.json")]
    model_file = os.path.join(score_dir, "score_model.json")
    if os.path.exists(model_file):
        inputs.append(model_file)
    key = run.stage_key("sample", [p for p in inputs if os.path.exists(p)])
    if run.is_current("sample", key):
        log.info("sample is up to date")
        return

    def body():
        pair = load_pair(pair_dir)
        latent = read_batch_csv(run.path("latent.csv"))
        score = run.load_score(score_dir)
        schedule = run.schedule()
        gen_path, init_path, truncated = _sample_into(run, pair, latent, score, schedule,
                                                      "generated")
        manifest_path = run.path("sample_manifest.json")
        with open(manifest_path, "w") as fh:
            json.dump({"schedule": schedule.to_dict(), "seed": run.seed(_SAMPLE),
                       "count": cfg.sizes.chains, "noise_scale": schedule.noise_scale,
                       "model_hash": git_hash(model_file) if os.path.exists(model_file)
                       else "oracle"}, fh, indent=2, sort_keys=True)
        run.record("sample", [("truncated_fraction", truncated, cfg.sizes.chains)])
        return [gen_path, init_path, manifest_path]

    _timed(run, "sample", key, body)


def reference_batch(run, count):
    return sample_target(run.target_spec(), count, run.seed(_REFERENCE))


def eval_rows(run, generated, reference, prefix=""):
    """W2 rows comparing the first ``min(len(generated), len(reference))`` rows of each."""
    rows = []
    A, B = generated.points, reference.points
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"generated dim {A.shape[1]} != reference dim {B.shape[1]}")
    n = min(A.shape[0], B.shape[0])
    if n == 0:
        return rows
    A, B = A[:n], B[:n]
    if n <= MAX_EXACT:
        rows.append((f"{prefix}w2_exact", w2_exact(A, B), n))
    rows.append((f"{prefix}w2_sliced", w2_sliced(A, B, 256, run.seed(_SLICES)), n))
    return rows


def cmd_eval(run, generated_path=None, reference_path=None):
    generated_path = generated_path or run.path("generated.csv")
    initial_path = generated_path[:-4] + "_initial.csv" if generated_path.endswith(".csv") else None
    own_reference = reference_path is None
    reference_path = reference_path or run.path("reference.csv")
    inputs = [generated_path] + ([reference_path] if not own_reference else [])
    key = run.stage_key("eval", [p for p in inputs if os.path.exists(p)])
    if run.is_current("eval", key):
        log.info("eval is up to date")
        return

    def body():
        generated = read_batch_csv(generated_path)
        if own_reference:
            write_batch_csv(reference_batch(run, max(run.cfg.sizes.eval_count, 1)),
                            reference_path)
        reference = read_batch_csv(reference_path)
        rows = eval_rows(run, generated, reference)
        if initial_path and os.path.exists(initial_path):
            rows += eval_rows(run, read_batch_csv(initial_path), reference, "initial_")
        if len(generated):
            rows += [(f"summary_{name}", value, len(generated))
                     for name, value in summary(generated).rows()]
        run.record("eval", rows)
        return [generated_path, reference_path]

    _timed(run, "eval", key, body)


def cmd_pipeline(run, oracle=False):
    cmd_pretrain(run)
    cmd_train_score(run, oracle=oracle)
    cmd_sample(run)
    cmd_eval(run)
    sweep = run.cfg.schedule.T_sweep
    if not sweep:
        return
    key = run.stage_key("sweep", [run.path("latent.csv"), run.path("score", "score_manifest.json")],
                        {"oracle": oracle})
    if run.is_current("sweep", key):
        log.info("sweep is up to date")
        return

    def body():
        pair = load_pair(run.path("pair"))
        latent = read_batch_csv(run.path("latent.csv"))
        score = run.load_score(run.path("score"))
        reference = read_batch_csv(run.path("reference.csv"))
        plot = run.path("plot_w2_vs_T.csv")
        lines = ["T,K,w2_exact,w2_sliced"]
        for T in sweep:
            schedule = run.schedule(T)
            gen_path, _, _ = _sample_into(run, pair, latent, score, schedule, f"sweep_T{T!r}")
            vals = dict((name, value) for name, value, _ in
                        eval_rows(run, read_batch_csv(gen_path), reference))
            lines.append(f"{T!r},{schedule.K},{vals.get('w2_exact', float('nan'))!r},"
                         f"{vals.get('w2_sliced', float('nan'))!r}")
            run.record("sweep", [(f"w2_exact_T={T!r}", vals.get("w2_exact", float("nan")),
                                  run.cfg.sizes.chains)])
        with open(plot, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return [plot]

    _timed(run, "sweep", key, body)


def build_parser():
    parser = argparse.ArgumentParser(prog="bridgegen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--force", action="store_true", help="rerun up-to-date stages")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("pretrain", help="train the encoder/decoder pair"))
    p = common(sub.add_parser("train-score", help="encode target data and fit the score"))
    p.add_argument("--pair", help="pair directory (default: <out>/pair)")
    p.add_argument("--oracle-score", action="store_true", help="use the analytic mixture score")
    p = common(sub.add_parser("sample", help="run the sampler and decode"))
    p.add_argument("--pair", help="pair directory (default: <out>/pair)")
    p.add_argument("--score", help="score directory (default: <out>/score)")
    p = common(sub.add_parser("eval", help="W2 and summary metrics"))
    p.add_argument("--generated", help="generated batch CSV (default: <out>/generated.csv)")
    p.add_argument("--reference", help="reference batch CSV (default: fresh target sample)")
    p = common(sub.add_parser("pipeline", help="run every stage"))
    p.add_argument("--oracle-score", action="store_true", help="use the analytic mixture score")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.seed, os.environ.get("BRIDGEGEN_OUT"))
        run = Run(cfg, force=args.force)
        if args.command == "pretrain":
            cmd_pretrain(run)
        elif args.command == "train-score":
            cmd_train_score(run, args.pair, args.oracle_score)
        elif args.command == "sample":
            cmd_sample(run, args.pair, args.score)
        elif args.command == "eval":
            cmd_eval(run, args.generated, args.reference)
        else:
            cmd_pipeline(run, args.oracle_score)
    except StageError as exc:
        print(f"bridgegen: error {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NumericError) else EXIT_VALIDATION
    except BridgeGenError as exc:
        print(f"bridgegen: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"bridgegen: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
