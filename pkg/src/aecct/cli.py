"""Batch command line: train, quantize, eval, bp, analyze, export-frozen, verify.

Exit codes:
    0  success
    1  ``verify`` found a failing invariant
    2  usage error (unknown flag, invalid value or configuration)
    3  missing input file
    4  parity-check matrix does not match the checkpoint / frozen model
    5  malformed input file
    6  training diverged
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
from dataclasses import asdict, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from .codes import CodeFormatError, CodeMismatchError, RankDeficientError, resolve_code

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CODE_MISMATCH = 4
EXIT_BAD_FORMAT = 5
EXIT_DIVERGED = 6

log = logging.getLogger("aecct")

PRESETS = {
    "desk": {"n_blocks": 2, "dim": 32, "heads": 8, "h_first": 4, "h_second": 4, "d_spe": 8,
             "epochs": 40, "batches_per_epoch": 1000, "phase2_epochs": 20, "batch_size": 128,
             "lr_max": 5e-4, "lr_min": 5e-7, "eval_every": 2000, "val_frames": 10000},
    # full-size budget; days of CPU time
    "paper": {"n_blocks": 6, "dim": 128, "heads": 8, "h_first": 4, "h_second": 4, "d_spe": 8,
              "epochs": 1000, "batches_per_epoch": 1000, "phase2_epochs": 1000, "batch_size": 128,
              "lr_max": 1e-4, "lr_min": 5e-7, "eval_every": 10000, "val_frames": 100000},
}
MODEL_KEYS = ("n_blocks", "dim", "heads", "h_first", "h_second", "d_spe", "attention_mode")
TRAIN_KEYS = ("epochs", "batches_per_epoch", "batch_size", "lr_max", "lr_min", "eval_every",
              "val_frames", "seed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def package_version() -> str:
    """Installed version plus ``git describe`` of the source tree when available."""
    try:
        base = version("artifact")
    except PackageNotFoundError:
        base = "0+unknown"
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                              cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{base}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_kv_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise UsageError(f"config line without '=': {line!r}")
        out[key.replace("-", "_")] = value
    return out


def _coerce(value, ref):
    if value is None or ref is None:
        return value
    return type(ref)(value)


def resolve_params(args) -> dict:
    """Preset, then config file, then explicit flags."""
    params = dict(PRESETS[args.preset])
    params.update({"attention_mode": "HPSA", "seed": 0})
    if getattr(args, "config", None):
        for key, value in read_kv_config(args.config).items():
            if key not in params:
                raise UsageError(f"unknown config key {key!r}")
            params[key] = _coerce(value, params[key])
    for key in params:
        flag = getattr(args, key, None)
        if flag is not None:
            params[key] = _coerce(flag, params[key])
    return params


def _model_config(params):
    from .model import ModelConfig

    return ModelConfig(**{k: params[k] for k in MODEL_KEYS})


def _train_config(params, epochs, log_path):
    from .training import TrainConfig

    return TrainConfig(**{k: params[k] for k in TRAIN_KEYS if k != "epochs"}, epochs=epochs,
                       log_path=str(log_path))


def _load_code(args):
    return resolve_code(args.code)


def write_manifest(out: Path, args, params: dict, inputs: dict, outputs: list):
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "preset": getattr(args, "preset", None),
        "config": params,
        "seeds": {"seed": params.get("seed")} if "seed" in params else {},
        "version": package_version(),
        "inputs": inputs,
        "outputs": {name: file_sha256(out / name) for name in outputs},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _code_inputs(args, pc) -> dict:
    info = {"code": args.code, "code_fingerprint": pc.fingerprint()}
    if Path(args.code).is_file():
        info["code_sha256"] = file_sha256(args.code)
    return info


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------------

def cmd_train(args) -> int:
    from .training import save_model, train_phase1

    pc = _load_code(args)
    params = resolve_params(args)
    out = _outdir(args)
    log_path = out / "train_log.jsonl"
    log_path.write_text("")
    cfg = _model_config(params)
    trainer = train_phase1(pc, cfg, _train_config(params, params["epochs"], log_path))
    save_model(trainer.model, out / "phase1.ckpt", "phase1",
               {"best_score": trainer.best_score, "loss_windows": trainer.loss_windows})
    (out / "model.cfg").write_text(cfg.to_text())
    write_manifest(out, args, params, _code_inputs(args, pc),
                   ["phase1.ckpt", "train_log.jsonl", "model.cfg"])
    print(json.dumps({"checkpoint": str(out / "phase1.ckpt"), "best_score": trainer.best_score}))
    return EXIT_OK


def cmd_quantize(args) -> int:
    from .training import load_model, save_model, train_phase2

    pc = _load_code(args)
    params = resolve_params(args)
    out = _outdir(args)
    model, _ = load_model(args.checkpoint, pc)
    log_path = out / "qat_log.jsonl"
    log_path.write_text("")
    trainer = train_phase2(model, _train_config(params, params["phase2_epochs"], log_path))
    save_model(trainer.model, out / "phase2.ckpt", "phase2")
    trainer.model.freeze().save(out / "model.frz")
    inputs = {**_code_inputs(args, pc), "checkpoint_sha256": file_sha256(args.checkpoint)}
    write_manifest(out, args, params, inputs, ["phase2.ckpt", "model.frz", "qat_log.jsonl"])
    print(json.dumps({"frozen": str(out / "model.frz")}))
    return EXIT_OK


def load_artifact(path, pc):
    """A frozen model file or a torch checkpoint, as an object with ``predict_logits``."""
    from .inference import MAGIC, FrozenAECCT

    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] == MAGIC:
        return FrozenAECCT.from_bytes(raw, pc)
    from .training import load_model

    try:
        model, _ = load_model(path, pc)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CodeFormatError(f"{path} is neither a checkpoint nor a frozen model") from exc
    return model


def _ebn0_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --ebn0 list {text!r}") from exc


def _run_eval(args, decoder_kind) -> int:
    from .evaluation import StoppingRule, ber_sweep, bp_decoder, logits_decoder, uncoded_decoder

    pc = _load_code(args)
    ebn0 = _ebn0_list(args.ebn0)
    if decoder_kind == "model" and not args.artifact:
        raise UsageError("--artifact is required for --decoder model")
    out = _outdir(args)
    inputs = _code_inputs(args, pc)
    if decoder_kind == "bp":
        decode, name = bp_decoder(pc, args.iters), f"bp(L={args.iters})"
    elif decoder_kind == "uncoded":
        decode, name = uncoded_decoder, "uncoded"
    else:
        decode, name = logits_decoder(load_artifact(args.artifact, pc)), Path(args.artifact).name
        inputs["artifact_sha256"] = file_sha256(args.artifact)
    stopping = StoppingRule(args.min_errors, args.max_frames, args.batch_frames)
    report = ber_sweep(decode, pc, ebn0, stopping, seed=args.seed,
                       mode=args.mode, decoder_id=name)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    params = {"decoder": decoder_kind, "iters": args.iters, "ebn0": args.ebn0, "seed": args.seed,
              "mode": args.mode, "stopping": asdict(stopping)}
    write_manifest(out, args, params, inputs, ["report.json", "report.csv"])
    print(report.to_json())
    return EXIT_OK


def cmd_eval(args) -> int:
    return _run_eval(args, args.decoder)


def cmd_bp(args) -> int:
    return _run_eval(args, "bp")


def cmd_analyze(args) -> int:
    from . import evaluation as ev

    pc = _load_code(args)
    params = resolve_params(args)
    out = _outdir(args)
    inputs = _code_inputs(args, pc)
    cfg = _model_config(params).to_dict()
    frozen = None
    if args.artifact:
        art = load_artifact(args.artifact, pc)
        inputs["artifact_sha256"] = file_sha256(args.artifact)
        if hasattr(art, "layers"):
            frozen = art
            cfg = dict(art.config)
        else:
            if art.cfg.quant_mode != "AAP":
                art.quantize_()
            cfg = art.cfg.to_dict()
            frozen = art.freeze()
    aecct = ev.complexity_report(cfg, pc, quantized=True)
    ecct = ev.complexity_report({**cfg, "attention_mode": "CASA"}, pc, quantized=False)
    report = {
        "code": pc.name,
        "config": cfg,
        "complexity": {"aecct": aecct.to_dict(), "ecct_fp32": ecct.to_dict(),
                       "bp": ev.bp_complexity(pc, args.iters).to_dict()},
        "sparsity": ev.sparsity_report(pc, frozen, cfg["h_first"], cfg["heads"] - cfg["h_first"]),
    }
    if frozen is None:
        from .model import AAP, AECCT

        model = AECCT(pc, replace(_model_config(params), quant_mode=AAP), seed=params["seed"])
        report["compression"] = ev.compression_report(*ev.model_storage(model))
    else:
        report["compression"] = ev.compression_report(*ev.model_storage(frozen))
    if args.energy:
        inputs["energy_sha256"] = file_sha256(args.energy)
        try:
            energy = ev.EnergyModel.load(args.energy)
        except ValueError as exc:
            raise CodeFormatError(f"{args.energy}: {exc}") from exc
        report["energy"] = ev.energy_report(aecct, energy, ecct)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    rows = [{"decoder": name, "category": cat, **ops}
            for name, rep in (("aecct", aecct), ("ecct_fp32", ecct))
            for cat, ops in sorted(rep.breakdown.items())]
    (out / "report.csv").write_text(ev.rows_to_csv(rows))
    write_manifest(out, args, {**params, "iters": args.iters}, inputs, ["report.json", "report.csv"])
    print(json.dumps(report["compression"]))
    return EXIT_OK


def cmd_export_frozen(args) -> int:
    from .training import load_model

    pc = _load_code(args)
    out = _outdir(args)
    model, meta = load_model(args.checkpoint, pc)
    if model.cfg.quant_mode != "AAP":
        raise UsageError("export-frozen needs a phase-2 (AAP) checkpoint")
    model.freeze().save(out / "model.frz")
    inputs = {**_code_inputs(args, pc), "checkpoint_sha256": file_sha256(args.checkpoint)}
    write_manifest(out, args, {"phase": meta.get("phase")}, inputs, ["model.frz"])
    print(json.dumps({"frozen": str(out / "model.frz")}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_invariants

    pc = _load_code(args)
    results = run_invariants(pc, seed=args.seed)
    failed = [r for r in results if not r["ok"]]
    for r in results:
        print(f"{'PASS' if r['ok'] else 'FAIL'}  {r['name']}: {r['detail']}")
    if args.out:
        out = _outdir(args)
        (out / "report.json").write_text(json.dumps(results, indent=2) + "\n")
        write_manifest(out, args, {"seed": args.seed}, _code_inputs(args, pc), ["report.json"])
    return EXIT_VERIFY_FAILED if failed else EXIT_OK


# -- parser -----------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", help="key = value file applied over the preset")
    p.add_argument("--n-blocks", dest="n_blocks", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--h-first", dest="h_first", type=int)
    p.add_argument("--h-second", dest="h_second", type=int)
    p.add_argument("--d-spe", dest="d_spe", type=int)
    p.add_argument("--attention", dest="attention_mode", choices=("HPSA", "CASA"))
    p.add_argument("--seed", type=int)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--phase2-epochs", dest="phase2_epochs", type=int)
    p.add_argument("--batches-per-epoch", dest="batches_per_epoch", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="lr_max", type=float)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--val-frames", dest="val_frames", type=int)


def _add_sweep_flags(p):
    p.add_argument("--ebn0", default="4,5,6", help="comma-separated Eb/N0 values in dB")
    p.add_argument("--iters", type=int, default=5, help="BP iterations L")
    p.add_argument("--min-errors", dest="min_errors", type=int, default=500)
    p.add_argument("--max-frames", dest="max_frames", type=int, default=1_000_000)
    p.add_argument("--batch-frames", dest="batch_frames", type=int, default=1000)
    p.add_argument("--mode", choices=("zero", "random"), default="zero")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aecct", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="phase-1 FP32 training")
    p.add_argument("--code", required=True)
    p.add_argument("--out", default="runs/train")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", help="phase-2 QAT from a phase-1 checkpoint, then freeze")
    p.add_argument("--code", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="runs/quantize")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="Monte-Carlo BER sweep")
    p.add_argument("--code", required=True)
    p.add_argument("--decoder", choices=("model", "bp", "uncoded"), default="model")
    p.add_argument("--artifact", help="frozen model or checkpoint")
    p.add_argument("--out", default="runs/eval")
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bp", help="BP BER sweep")
    p.add_argument("--code", required=True)
    p.add_argument("--out", default="runs/bp")
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_bp)

    p = sub.add_parser("analyze", help="complexity, energy, compression and sparsity reports")
    p.add_argument("--code", required=True)
    p.add_argument("--artifact", help="frozen model or checkpoint")
    p.add_argument("--energy", help="JSON file of per-op energy constants")
    p.add_argument("--iters", type=int, default=5, help="BP iterations for the comparison row")
    p.add_argument("--out", default="runs/analyze")
    _add_model_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export-frozen", help="freeze a phase-2 checkpoint")
    p.add_argument("--code", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="runs/export")
    p.set_defaults(func=cmd_export_frozen)

    p = sub.add_parser("verify", help="run the invariant suite on a code")
    p.add_argument("--code", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"aecct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    from .inference import FrozenFormatError
    from .training import TrainingDiverged

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"aecct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"aecct: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except CodeMismatchError as exc:
        print(f"aecct: code mismatch: {exc}", file=sys.stderr)
        return EXIT_CODE_MISMATCH
    except (CodeFormatError, RankDeficientError, FrozenFormatError) as exc:
        print(f"aecct: bad input: {exc}", file=sys.stderr)
        return EXIT_BAD_FORMAT
    except TrainingDiverged as exc:
        print(f"aecct: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"aecct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
