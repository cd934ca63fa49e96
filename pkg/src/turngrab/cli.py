"""Command-line entry point.

Every command writes its outputs under ``--out`` together with
``config.json``, an echo of the fully resolved parameters. Values come from
built-in defaults, then an optional ``--config`` JSON file, then flags.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import ingest, load_tracks, save_tracks, write_asd_csv, write_feature_csv
from .datasets import load_dataset, save_dataset
from .errors import DataError, InvalidConfig
from .segmentation import PURole, SamplerConfig, Truth, extract_samples

log = logging.getLogger("turngrab")

LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _echo(out, command, args, **configs):
    """Write the resolved parameters of a run next to its outputs."""
    params = {k: v for k, v in vars(args).items() if k not in ("func", "config", "command")}
    echo = {"command": command, "version": __version__, "args": _jsonable(params)}
    for name, cfg in configs.items():
        echo[name] = cfg.to_dict() if hasattr(cfg, "to_dict") else cfg
    _dump(echo, Path(out) / "config.json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

DEFAULTS = {
    "seed": 0,
    "estimator": "nnpu",
    "prior": None,
    "threshold": 0.0,
    "jobs": 1,
    "loss": "sigmoid",
    "max_gap": 1.0,
    "video_id": "",
    "sessions": 1,
    "session_len": 600.0,
    "participants": 4,
    "lead": 2.0,
    "frame_rate": None,
}


def _load_config(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data


def _resolve(args):
    """Fill unset flags from the config file, then from defaults."""
    file_cfg = _load_config(args.config)
    args.sections = {k: file_cfg.pop(k) for k in ("sampler", "network", "synth", "space")
                     if k in file_cfg}
    for key, value in file_cfg.items():
        if not hasattr(args, key):
            raise UsageError(f"unknown config key {key!r}")
        if getattr(args, key) is None:
            setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _section(args, name, cls, **overrides):
    """Dataclass config from a config-file section plus flag overrides."""
    data = dict(args.sections.get(name, {}))
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**data)
    except TypeError as exc:
        raise InvalidConfig(f"bad {name} config: {exc}") from None


def _sampler(args):
    return _section(args, "sampler", SamplerConfig, rng_seed=args.seed,
                    l_max=getattr(args, "l_max", None), l_excl=getattr(args, "l_excl", None),
                    unlabeled_per_minute=getattr(args, "unlabeled_per_minute", None))


def _network(args):
    from .net import NetworkConfig

    cfg = _section(args, "network", NetworkConfig, epochs=getattr(args, "epochs", None),
                   learning_rate=getattr(args, "lr", None),
                   batch_size=getattr(args, "batch_size", None))
    return replace(cfg, init_seed=args.seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args):
    out = _out_dir(args)
    tracks = ingest(args.features, args.asd, video_id=args.video_id, max_gap=args.max_gap)
    save_tracks(tracks, out, video_id=args.video_id)
    _echo(out, "ingest", args)
    log.info("wrote %d tracks to %s", len(tracks), out)


def _session_truth(session):
    """Intention runs per face as inclusive ``[first_frame_time, last_frame_time]``."""
    from .segmentation import _runs

    runs = {}
    for tr in session.tracks:
        label = session.frame_labels[tr.face_id]
        runs[tr.face_id] = [[float(tr.times[a]), float(tr.times[b - 1])]
                            for a, b, on in _runs(label) if on]
    return {"frame_rate": session.config.frame_rate, "intention": runs,
            "takeovers": [[f, t] for f, t in session.takeovers]}


def cmd_synth(args):
    from .synth import SynthConfig, generate_session

    out = _out_dir(args)
    base = _section(args, "synth", SynthConfig, session_len=args.session_len,
                    n_participants=args.participants, intention_lead=args.intention_lead)
    configs = [replace(base, rng_seed=args.seed * 1000 + i, video_id=f"session{i:02d}")
               for i in range(args.sessions)]
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            sessions = list(pool.map(generate_session, configs))
    else:
        sessions = [generate_session(c) for c in configs]
    for cfg, sess in zip(configs, sessions):
        sdir = out / cfg.vid
        save_tracks(sess.tracks, sdir / "tracks", video_id=cfg.vid)
        _dump(_session_truth(sess), sdir / "tracks" / "truth.json")
        write_feature_csv(sdir / "features.csv", sess.tracks)
        write_asd_csv(sdir / "asd.csv", sess.tracks)
    _echo(out, "synth", args, synth=base)
    log.info("wrote %d sessions to %s", len(sessions), out)


def _attach_truth(samples, truth, tracks):
    fr = {(t.video_id, t.face_id): t.frame_rate for t in tracks}
    for s in samples:
        t_last = s.t_end - 1.0 / fr[s.source]
        runs = truth["intention"].get(s.face_id, [])
        hit = any(a - 1e-6 <= t_last <= b + 1e-6 for a, b in runs)
        s.truth = Truth.POSITIVE if hit else Truth.NEGATIVE


def cmd_extract(args):
    out = _out_dir(args)
    cfg = _sampler(args)
    positives, unlabeled = [], []
    n_events = 0
    for index, tdir in enumerate(args.tracks):
        tracks = load_tracks(tdir)
        rng = np.random.default_rng([cfg.rng_seed, index])
        pos, unl, events = extract_samples(tracks, cfg, rng=rng)
        n_events += sum(len(v) for v in events.values())
        truth_file = Path(tdir) / "truth.json"
        if truth_file.exists():
            _attach_truth(pos + unl, json.loads(truth_file.read_text(encoding="utf-8")), tracks)
        positives.extend(pos)
        unlabeled.extend(unl)
    save_dataset(out, positives + unlabeled, config=cfg.to_dict(), seed=args.seed,
                 extra={"sources": [str(t) for t in args.tracks], "events": n_events})
    _echo(out, "extract", args, sampler=cfg)
    log.info("extracted %d positive and %d unlabeled windows", len(positives), len(unlabeled))


def _split(samples):
    P = [s for s in samples if s.pu_role == PURole.POSITIVE]
    U = [s for s in samples if s.pu_role == PURole.UNLABELED]
    return P, U


def _risk(args, train_samples, val_samples):
    from .net import labeled_arrays
    from .pu import RiskConfig, estimate_prior

    prior = args.prior
    if prior is None:
        source = train_samples if args.estimator == "pn" else val_samples
        prior = estimate_prior(labeled_arrays(source)[1])
    return RiskConfig(prior=float(prior), loss_kind=args.loss, estimator=args.estimator)


def _training_sets(args, samples):
    if args.estimator == "pn":
        from .net import labeled_arrays

        X, y = labeled_arrays(samples)
        if len(y) == 0:
            raise DataError("the pn estimator needs samples with ground truth")
        return X[y], X[~y]
    return _split(samples)


def cmd_train(args):
    from .net import save_history, train

    out = _out_dir(args)
    samples = load_dataset(args.data)
    val = load_dataset(args.val)
    net_cfg = _network(args)
    risk_cfg = _risk(args, samples, val)
    first, second = _training_sets(args, samples)
    params, history = train(first, second, val, net_cfg, risk_cfg)
    params.save(out / "model.bin")
    save_history(history, out / "history.json")
    _echo(out, "train", args, network=net_cfg, risk=risk_cfg.__dict__)
    best = max((h["val_mcc"] for h in history), default=None)
    log.info("trained %d epochs, best validation MCC %s", len(history), best)


def cmd_eval(args):
    from .metrics import evaluation_report
    from .net import ModelParams, labeled_arrays, logits

    out = _out_dir(args)
    params = ModelParams.load(args.model)
    X, y = labeled_arrays(load_dataset(args.data))
    if len(y) == 0:
        raise DataError("evaluation needs samples with ground truth")
    report = evaluation_report(logits(params, X), y, args.threshold)
    _dump(report, out / "metrics.json")
    _echo(out, "eval", args)
    print(json.dumps({k: report[k] for k in ("mcc", "auc", "f_score", "accuracy")}, sort_keys=True))


def cmd_tune(args):
    from .net import iter_train
    from .tuner import SearchSpace, run_study

    out = _out_dir(args)
    if args.space is not None:
        space = SearchSpace.from_json(args.space)
    else:
        space = _section(args, "space", SearchSpace)
    samples = load_dataset(args.data)
    val = load_dataset(args.val)
    risk_cfg = _risk(args, samples, val)
    first, second = _training_sets(args, samples)
    base = _network(args)

    def train_fn(cfg, seed):
        for record, _ in iter_train(first, second, val, replace(cfg, init_seed=seed), risk_cfg):
            yield record["val_mcc"]

    checkpoint = Path(args.resume) if args.resume else out / "checkpoint.json"
    report = run_study(space, train_fn, seed=args.seed, base=base, checkpoint=checkpoint,
                       resume=args.resume is not None)
    report.save(out / "report.json")
    _echo(out, "tune", args, space=space, risk=risk_cfg.__dict__)
    best = report.best_trial
    log.info("best trial %s", best.trial_id if best else None)


def cmd_trajectory(args):
    from .effect import trajectory_from_tracks
    from .segmentation import detect_turn_events, smooth_asd

    out = _out_dir(args)
    cfg = _sampler(args)
    tracks, events = [], []
    for tdir in args.tracks:
        trs = [smooth_asd(t, cfg) for t in load_tracks(tdir)]
        tracks.extend(trs)
        events.extend(detect_turn_events(trs))
    traj = trajectory_from_tracks(tracks, events, lead=args.lead,
                                  frame_size=tuple(args.frame_size), frame_rate=args.frame_rate)
    traj.save(out / "trajectory.json")
    _echo(out, "trajectory", args, sampler=cfg)


def cmd_effect(args):
    from .effect import LeanTrajectory, apply_effect, list_frames, read_ppm, write_ppm

    out = _out_dir(args)
    traj = LeanTrajectory.load(args.trajectory)
    triggers = json.loads(Path(args.triggers).read_text(encoding="utf-8"))
    if isinstance(triggers, dict):
        triggers = triggers.get("triggers", [])
    paths = list_frames(args.frames)
    frames = [read_ppm(p) for p in paths]
    fr = args.frame_rate or traj.frame_rate
    centers = None
    if args.centers:
        centers = [tuple(c) for c in json.loads(Path(args.centers).read_text(encoding="utf-8"))]
        if len(centers) != len(frames):
            raise DataError(f"{len(centers)} face centres for {len(frames)} frames")
    result, starts = apply_effect(frames, traj, [float(t) for t in triggers], face_centers=centers,
                                  frame_times=[i / fr for i in range(len(frames))], jobs=args.jobs)
    for p, img in zip(paths, result):
        write_ppm(out / p.name, img)
    _dump({"playback_starts": starts, "frames": len(frames)}, out / "playbacks.json")
    _echo(out, "effect", args)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, help="seed for all randomness (default 0)")
    g.add_argument("--estimator", choices=("pn", "upu", "nnpu"), help="risk estimator (default nnpu)")
    g.add_argument("--prior", type=float, help="class prior; estimated from labels when omitted")
    g.add_argument("--threshold", type=float, help="decision threshold on the logit (default 0)")
    g.add_argument("--jobs", type=int, help="worker threads for parallel steps (default 1)")
    g.add_argument("--config", help="JSON file of parameters; flags override it")

    parser = _Parser(prog="turngrab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, description=help)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "match feature and ASD streams into face tracks")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--asd", required=True, help="ASD CSV")
    p.add_argument("--out", required=True, help="output track directory")
    p.add_argument("--video-id")
    p.add_argument("--max-gap", type=float, help="longest gap filled by interpolation, seconds")

    p = add("synth", cmd_synth, "generate synthetic sessions with known intention")
    p.add_argument("--out", required=True)
    p.add_argument("--sessions", type=int)
    p.add_argument("--session-len", type=float, help="seconds per session")
    p.add_argument("--participants", type=int)
    p.add_argument("--intention-lead", type=float, help="mean intention duration, seconds")

    p = add("extract", cmd_extract, "draw positive and unlabeled windows from tracks")
    p.add_argument("--tracks", required=True, nargs="+", help="track directories")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--l-max", type=float)
    p.add_argument("--l-excl", type=float)
    p.add_argument("--unlabeled-per-minute", type=float)

    p = add("train", cmd_train, "train the intention classifier")
    p.add_argument("--data", required=True, help="training dataset manifest")
    p.add_argument("--val", required=True, help="validation dataset manifest (with truth)")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--loss", choices=("sigmoid", "logistic"))

    p = add("eval", cmd_eval, "score a trained model on a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("tune", cmd_tune, "grid search with median pruning")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--space", help="search space JSON")
    p.add_argument("--resume", help="checkpoint to resume from (and keep updating)")
    p.add_argument("--epochs", type=int, help="base epochs (the space's value wins)")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--loss", choices=("sigmoid", "logistic"))

    p = add("trajectory", cmd_trajectory, "build a lean-forward trajectory from face tracks")
    p.add_argument("--tracks", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--lead", type=float, help="seconds before onset (default 2)")
    p.add_argument("--frame-size", type=int, nargs=2, default=[1280, 720], metavar=("W", "H"))
    p.add_argument("--frame-rate", type=float)

    p = add("effect", cmd_effect, "apply the lean-forward effect to PPM frames")
    p.add_argument("--frames", required=True, help="directory of .ppm frames")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--triggers", required=True, help="JSON list of trigger times, seconds")
    p.add_argument("--out", required=True)
    p.add_argument("--centers", help="JSON list of per-frame [cx, cy]")
    p.add_argument("--frame-rate", type=float, help="frame rate of the input (default: trajectory's)")
    return parser


def _setup_logging():
    level = os.environ.get("TURNGRAB_LOG", "warning").lower()
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("turngrab").setLevel(LOG_LEVELS.get(level, logging.WARNING))


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        _resolve(args)
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except InvalidConfig as exc:
        print(f"turngrab: configuration error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"turngrab: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
