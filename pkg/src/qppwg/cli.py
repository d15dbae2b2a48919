"""Command-line entry point: ``qppwg {gen-data,train,synth,bench,analyze,metrics}``.

Every option can also come from the ``--config`` JSON file (keys are the
option names with dashes replaced by underscores); flags given on the
command line win. Exit codes: 0 success, 1 usage error, 2 config or
invariant violation, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .audio import read_wav, write_wav
from .conditioning import DEFAULT_HOP, DEFAULT_SAMPLE_RATE, STREAM_LAYOUT, read_features
from .errors import ConfigurationError, QPPWGError, UsageError
from .models import PRESETS, Generator, GeneratorConfig, preset
from .synthetic import SyntheticUtteranceSpec, gen_synthetic, load_dataset, random_specs
from .training import TrainConfig, Trainer
from .vocoder import load_generator, synthesize

logger = logging.getLogger("qppwg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class Options:
    """Flag values layered over the JSON config over built-in defaults."""

    def __init__(self, args: argparse.Namespace, config: dict, defaults: dict):
        self._args, self._config, self._defaults = vars(args), config, defaults

    def __getattr__(self, key):
        value = self._args.get(key)
        if value is not None:
            return value
        if key in self._config:
            return self._config[key]
        return self._defaults.get(key)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return data


def _existing(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _feature_paths(items) -> list:
    paths = []
    for item in items or []:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.json")))
        elif p.exists():
            paths.append(p)
        else:
            raise UsageError(f"no such feature file or directory: {p}")
    if not paths:
        raise UsageError("no feature manifests given")
    return paths


def _generator_config(opts: Options) -> GeneratorConfig:
    gen = opts.generator
    if isinstance(gen, dict):
        return GeneratorConfig.from_dict(gen)
    return preset(opts.preset)


# -- commands -----------------------------------------------------------------

def cmd_gen_data(opts: Options) -> int:
    if opts.specs:
        specs = [SyntheticUtteranceSpec(**s) for s in opts.specs]
    else:
        specs = random_specs(int(opts.count), seed=int(opts.seed), duration=float(opts.duration),
                             f0_range=(float(opts.f0_min), float(opts.f0_max)),
                             with_gaps=bool(opts.with_gaps), prefix=opts.prefix)
    paths = gen_synthetic(specs, opts.out, int(opts.sample_rate), int(opts.hop_samples))
    print(f"wrote {len(paths)} utterances to {opts.out}")
    return 0


def cmd_train(opts: Options) -> int:
    utts = load_dataset(_existing(opts.data, "data directory"))
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    if opts.resume:
        trainer = Trainer.load(_existing(opts.resume, "checkpoint"), utts)
    else:
        train = dict(opts.train or {})
        recipe = train.pop("recipe", opts.recipe)
        if recipe not in ("desk", "full"):
            raise UsageError(f"recipe must be 'desk' or 'full', got {recipe!r}")
        cfg = TrainConfig.desk(**train) if recipe == "desk" else TrainConfig(**train)
        if opts.total_steps is not None:
            cfg.total_steps = int(opts.total_steps)
            cfg.__post_init__()
        trainer = Trainer(_generator_config(opts), cfg, utts, seed=int(opts.seed))
    steps = None if opts.steps is None else int(opts.steps)
    trainer.run(steps, log_path=out / "loss_log.csv", log_every=int(opts.log_every))
    ckpt = trainer.save(out / "checkpoint.qppwg")
    last = trainer.history[-1] if trainer.history else None
    print(f"step {trainer.step} checkpoint {ckpt}" + (f" l_sp {last['l_sp']:.4f}" if last else ""))
    return 0


def _check_layout(manifest: dict, header: dict, path: Path) -> None:
    expected = [list(x) for x in header.get("feature_layout", [[n, d] for n, d in STREAM_LAYOUT])]
    found = [[e["name"], int(e["dims"])] for e in manifest["layout"]]
    if found != expected:
        raise UsageError(f"{path}: feature layout {found} does not match checkpoint layout {expected}")
    for key in ("sample_rate", "hop_samples"):
        if key in header and int(manifest[key]) != int(header[key]):
            raise UsageError(f"{path}: {key} {manifest[key]} differs from checkpoint {header[key]}")


def cmd_synth(opts: Options) -> int:
    gen, normalizer, header = load_generator(_existing(opts.checkpoint, "checkpoint"))
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    ratio = float(opts.f0_ratio)
    for path in _feature_paths(opts.features):
        feats, manifest = read_features(path)
        _check_layout(manifest, header, path)
        y = synthesize(gen, feats, normalizer, f0_ratio=ratio, seed=int(opts.seed),
                       sample_rate=int(manifest["sample_rate"]), hop_samples=int(manifest["hop_samples"]))
        target = write_wav(out / f"{path.stem}.wav", y, int(manifest["sample_rate"]))
        print(target)
    return 0


def cmd_bench(opts: Options) -> int:
    if opts.checkpoint:
        generators = [load_generator(_existing(opts.checkpoint, "checkpoint"))[0]]
    else:
        names = opts.presets or list(PRESETS)
        generators = [Generator(preset(n), seed=int(opts.seed)) for n in names]
    threads = None if opts.threads is None else int(opts.threads)
    rows = []
    for gen in generators:
        row = analysis.bench_rtf(gen, float(opts.seconds), threads=threads, runs=int(opts.runs),
                                 seed=int(opts.seed))
        rows.append(row)
        print(f"{row['config']}: params {row['parameters']} threads {row['threads']} "
              f"median {row['median_s']:.4f}s samples/s {row['samples_per_s']:.0f} RTF {row['rtf']:.4f}")
    if opts.out:
        analysis.write_rows(opts.out, rows, analysis.BENCH_COLUMNS)
    return 0


def cmd_analyze(opts: Options) -> int:
    gen = normalizer = None
    if opts.checkpoint:
        gen, normalizer, _ = load_generator(_existing(opts.checkpoint, "checkpoint"))
        config = gen.config
    else:
        config = _generator_config(opts)
    report = analysis.structure_report(config, float(opts.f0))
    print(f"config {report['config']} parameters {report['parameters']}")
    print(f"f0 {report['f0']} Hz  E_t {report['e_t']}  receptive field {report['receptive_field']}")
    for m in report["macroblocks"]:
        print(f"  {m['macroblock']}: receptive field {m['receptive_field']}")
    out = Path(opts.out) if opts.out else None
    if out is not None:
        rows = [{"item": "total", "receptive_field": report["receptive_field"]}]
        rows += [{"item": m["macroblock"], "receptive_field": m["receptive_field"]} for m in report["macroblocks"]]
        for r in rows:
            r.update(config=report["config"], parameters=report["parameters"], f0=report["f0"], e_t=report["e_t"])
        analysis.write_rows(out / "structure.csv", rows,
                            ("config", "parameters", "f0", "e_t", "item", "receptive_field"))
    if opts.features:
        if gen is None:
            raise UsageError("cumulative spectra need --checkpoint")
        if out is None:
            raise UsageError("cumulative spectra need --out")
        path = _feature_paths([opts.features])[0]
        feats, manifest = read_features(path)
        spectra = analysis.cumulative_spectra(gen, feats, normalizer, seed=int(opts.seed),
                                              sample_rate=int(manifest["sample_rate"]),
                                              hop_samples=int(manifest["hop_samples"]))
        paths = analysis.write_spectra(spectra, out / "spectra")
        print(f"wrote {len(paths)} spectrogram CSVs to {out / 'spectra'}")
    return 0


def cmd_metrics(opts: Options) -> int:
    ratio = float(opts.f0_ratio)
    gen_dir = _existing(opts.generated, "generated audio directory")
    report = analysis.MetricsReport()
    for path in _feature_paths(opts.features):
        feats, manifest = read_features(path)
        wav = gen_dir / f"{path.stem}.wav"
        if not wav.exists():
            raise UsageError(f"no generated audio for {path.stem} in {gen_dir}")
        audio, rate = read_wav(wav)
        if rate != int(manifest["sample_rate"]):
            raise UsageError(f"{wav}: sample rate {rate} differs from features {manifest['sample_rate']}")
        reference = None
        if ratio == 1.0 and "audio" in manifest and (path.parent / manifest["audio"]).exists():
            reference = read_wav(path.parent / manifest["audio"])[0]
        rmse, cov, spectral = analysis.utterance_metrics(
            feats.f0 * ratio, audio, reference_audio=reference, sample_rate=rate,
            hop_samples=int(manifest["hop_samples"]))
        report.add(path.stem, rmse, cov, spectral)
        print(f"{path.stem}: log_f0_rmse {rmse:.4f} voiced_coverage {cov:.3f}"
              + ("" if spectral is None else f" stft_distance {spectral:.4f}"))
    print(f"mean log_f0_rmse {report.mean('log_f0_rmse'):.4f}")
    if opts.out:
        report.write_csv(opts.out)
    return 0


# -- parser -------------------------------------------------------------------

DEFAULTS = {
    "gen-data": dict(count=10, duration=1.0, f0_min=100.0, f0_max=250.0, with_gaps=False, prefix="utt",
                     sample_rate=DEFAULT_SAMPLE_RATE, hop_samples=DEFAULT_HOP, seed=0),
    "train": dict(preset="desk", recipe="desk", log_every=100, seed=0),
    "synth": dict(f0_ratio=1.0, seed=0),
    "bench": dict(seconds=1.0, runs=3, seed=0),
    "analyze": dict(preset="QPPWG_af", f0=50.0, seed=0),
    "metrics": dict(f0_ratio=1.0, seed=0),
}

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "analyze": cmd_analyze,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qppwg", description="Quasi-periodic parallel WaveGAN vocoder toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with option values")
        p.add_argument("--seed", type=int)
        return p

    p = command("gen-data", "write a synthetic harmonic-plus-noise dataset")
    p.add_argument("--out")
    p.add_argument("--count", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--f0-min", type=float)
    p.add_argument("--f0-max", type=float)
    p.add_argument("--with-gaps", action="store_true", default=None)
    p.add_argument("--prefix")
    p.add_argument("--sample-rate", type=int)
    p.add_argument("--hop-samples", type=int)

    p = command("train", "train a generator/discriminator pair")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--preset", choices=sorted(PRESETS) + ["desk"])
    p.add_argument("--recipe", choices=["desk", "full"])
    p.add_argument("--steps", type=int, help="run this many more steps (default: up to total_steps)")
    p.add_argument("--total-steps", type=int)
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.add_argument("--log-every", type=int)

    p = command("synth", "synthesize waveforms from feature files")
    p.add_argument("--checkpoint")
    p.add_argument("--features", nargs="+", help="feature manifests or directories")
    p.add_argument("--f0-ratio", type=float)
    p.add_argument("--out")

    p = command("bench", "measure the real-time factor")
    p.add_argument("--checkpoint")
    p.add_argument("--presets", nargs="+", choices=sorted(PRESETS) + ["desk"])
    p.add_argument("--seconds", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out", help="CSV report path")

    p = command("analyze", "parameter count, receptive fields and cumulative spectra")
    p.add_argument("--checkpoint")
    p.add_argument("--preset", choices=sorted(PRESETS) + ["desk"])
    p.add_argument("--f0", type=float)
    p.add_argument("--features", help="utterance for the cumulative-spectra dump")
    p.add_argument("--out", help="output directory for CSV reports")

    p = command("metrics", "log-F0 RMSE and spectral distance of generated audio")
    p.add_argument("--features", nargs="+")
    p.add_argument("--generated", help="directory of generated <name>.wav files")
    p.add_argument("--f0-ratio", type=float)
    p.add_argument("--out", help="CSV report path")
    return parser


REQUIRED = {
    "gen-data": ("out",),
    "train": ("data", "out"),
    "synth": ("checkpoint", "features", "out"),
    "metrics": ("features", "generated"),
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        opts = Options(args, _load_config(args.config), DEFAULTS[args.command])
        missing = [k for k in REQUIRED.get(args.command, ()) if opts.__getattr__(k) is None]
        if missing:
            raise UsageError(f"{args.command}: missing required option(s) "
                             + ", ".join("--" + k.replace("_", "-") for k in missing))
        return COMMANDS[args.command](opts)
    except QPPWGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
