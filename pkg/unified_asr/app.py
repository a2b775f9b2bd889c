"""
Main Application
Coordinates all components: parses the command line, resolves configuration,
runs one subcommand and records a run manifest next to its outputs.
"""

import argparse
import datetime
import json
import os
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .common import (
    BRIDGE_KINDS, CHUNK_FULL, VERSION, Config, RunManifest, UnifiedASRError, ValidationError,
    format_chunk, parse_chunk,
)
from .core.analysis import CERRow, cer, gap_report, select_sample, write_cer_report, write_gap_report
from .core.checkpoint import Checkpoint, averaged_checkpoint, load_checkpoint, parameter_summary, save_checkpoint
from .core.config_manager import ConfigManager
from .core.data import gen_corpus, load_corpus, save_corpus, split_corpus
from .core.decoding import decode_corpus, first_pass_best, read_nbest, write_nbest
from .core.logger import Logger
from .core.ngram import read_arpa, train_ngram, write_arpa
from .core.training import Trainer, run_experiment
from .interfaces.ui_interface import UIInterface
from .ui.rich_ui import RichUI

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

DEFAULT_CONFIG_FILE = "config.json"


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to exit 1"""

    def error(self, message):
        raise ValidationError(f"{message}\n{self.format_usage().rstrip()}")


def _chunk_list(value: str) -> List[Optional[int]]:
    return [parse_chunk(part) for part in value.split(",") if part.strip()]


def _assignment(item: str) -> Tuple[str, Any]:
    """KEY=VALUE with a JSON value; anything that is not JSON stays a string"""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ValidationError(f"expected KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _manifest_path(out: str, single_file: bool) -> str:
    return f"{out}.manifest.json" if single_file else os.path.join(out, "manifest.json")


def build_parser() -> ArgumentParser:
    """Command-line surface; every flag default is shown by --help"""
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = ArgumentParser(prog="uasr", description="Unified streaming / non-streaming ASR toolkit",
                            formatter_class=formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")

    shared = ArgumentParser(add_help=False, formatter_class=formatter)
    shared.add_argument("--seed", type=int, default=None, help="single seed for all randomness (config: seed)")
    shared.add_argument("--config", default=None, help="JSON config file or run manifest")
    shared.add_argument("--quiet", action="store_true", help="suppress the banner and tables")

    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=ArgumentParser)
    sub.required = True

    p = sub.add_parser("gen-data", parents=[shared], formatter_class=formatter,
                       help="generate the synthetic train/test corpus")
    p.add_argument("--out", required=True, help="output directory (train.jsonl, test.jsonl)")
    p.add_argument("--n-utts", type=int, default=None, help="total utterances (config: data.n_utts)")
    p.add_argument("--n-test", type=int, default=None, help="held-out utterances (config: data.n_test)")
    p.add_argument("--noise", type=float, default=None, help="frame noise sigma (config: data.noise_sigma)")

    p = sub.add_parser("train", parents=[shared], formatter_class=formatter, help="joint dual-mode training")
    p.add_argument("--train", required=True, help="training corpus JSONL")
    p.add_argument("--valid", default=None, help="validation corpus JSONL (default: last 10%% of --train)")
    p.add_argument("--out", required=True, help="output directory")
    _training_flags(p)

    p = sub.add_parser("decode", parents=[shared], formatter_class=formatter, help="two-pass decoding")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--corpus", required=True, help="corpus JSONL to decode")
    p.add_argument("--out", required=True, help="N-best JSONL output file")
    p.add_argument("--chunk", default=None, help="'full' or a chunk size ≥ 1 (config: decode.chunk)")
    p.add_argument("--pass", dest="passes", type=int, default=None, help="1 or 2 (config: decode.passes)")
    p.add_argument("--beam", type=int, default=None, help="beam width (config: decode.beam)")
    p.add_argument("--lm", default=None, help="ARPA n-gram LM for shallow fusion")
    p.add_argument("--lm-weight", type=float, default=None, help="LM weight (config: decode.lm_weight)")
    p.add_argument("--ctc-weight", type=float, default=None, help="pass-2 CTC weight (config: decode.ctc_weight)")
    p.add_argument("--workers", type=int, default=None, help="decoding threads (config: decode.workers)")
    p.add_argument("--full-context-rescore", action="store_true", default=None,
                   help="re-encode with full context for pass 2")

    p = sub.add_parser("eval", parents=[shared], formatter_class=formatter, help="CER of an N-best file")
    p.add_argument("--nbest", required=True, help="N-best JSONL from decode")
    p.add_argument("--corpus", required=True, help="reference corpus JSONL")
    p.add_argument("--out", required=True, help="CER CSV output file")
    p.add_argument("--pass", dest="passes", type=int, default=None,
                   help="score the pass-1 or pass-2 best (default: the pass decode ran)")

    p = sub.add_parser("analyze-gap", parents=[shared], formatter_class=formatter,
                       help="streaming vs. full-context representation gap")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--corpus", required=True, help="corpus JSONL to sample from")
    p.add_argument("--out", required=True, help="output directory (gap.csv, projection.csv)")
    p.add_argument("--chunks", default=None, help="comma-separated chunk sizes (config: analysis.chunks)")
    p.add_argument("--sample-size", type=int, default=None, help="utterances analysed (config: analysis.sample_size)")

    p = sub.add_parser("avg-ckpt", parents=[shared], formatter_class=formatter,
                       help="average the k best checkpoints")
    p.add_argument("ckpts", nargs="+", help="checkpoint files")
    p.add_argument("--k", type=int, default=None, help="checkpoints to average (config: train.top_k)")
    p.add_argument("--out", required=True, help="averaged checkpoint file")

    p = sub.add_parser("train-lm", parents=[shared], formatter_class=formatter, help="train an ARPA n-gram LM")
    p.add_argument("--corpus", required=True, help="corpus JSONL whose transcripts are counted")
    p.add_argument("--order", type=int, default=3, help="n-gram order")
    p.add_argument("--out", required=True, help="ARPA output file")

    p = sub.add_parser("experiment", parents=[shared], formatter_class=formatter,
                       help="bridge ablation: train one arm per bridge and compare CER")
    p.add_argument("--train", required=True, help="training corpus JSONL")
    p.add_argument("--valid", default=None, help="validation corpus JSONL (default: last 10%% of --train)")
    p.add_argument("--test", required=True, help="test corpus JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bridges", default=",".join(BRIDGE_KINDS), help="comma-separated bridge settings")
    p.add_argument("--chunks", default="full,16,8,4", help="comma-separated decoding chunks")
    p.add_argument("--lm", default=None, help="ARPA n-gram LM for shallow fusion")
    _training_flags(p)

    p = sub.add_parser("config", formatter_class=formatter,
                       help="show, edit or reset a config file; inspect or clear the run log")
    p.add_argument("--config", default=DEFAULT_CONFIG_FILE, help="config file to show or edit")
    p.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted key and JSON value, e.g. train.epochs=5 or decode.chunk=null; repeatable")
    p.add_argument("--reset", action="store_true", help="overwrite the file with the built-in defaults first")
    p.add_argument("--clear-log", action="store_true", help="truncate the run log")
    p.add_argument("--quiet", action="store_true", help="suppress the banner and summary")
    return parser


def _training_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=None, help="config: train.epochs")
    p.add_argument("--batch-size", type=int, default=None, help="config: train.batch_size")
    p.add_argument("--peak-lr", type=float, default=None, help="config: train.peak_lr")
    p.add_argument("--warmup", type=int, default=None, help="config: train.warmup_steps")
    p.add_argument("--lambda", dest="ctc_weight", type=float, default=None,
                   help="CTC weight λ in the joint loss (config: train.ctc_weight)")
    p.add_argument("--bridge", choices=BRIDGE_KINDS, default=None, help="config: train.contrastive.bridge")
    p.add_argument("--temperature", type=float, default=None, help="config: train.contrastive.temperature")
    p.add_argument("--distractors", type=int, default=None, help="config: train.contrastive.num_distractors")
    p.add_argument("--ctl-weight", type=float, default=None, help="config: train.contrastive.ctl_weight")


class UnifiedASRApp:
    """Main application coordinator"""

    def __init__(self, ui: Optional[UIInterface] = None):
        self.ui = ui if ui is not None else RichUI()
        self.config_manager: Optional[ConfigManager] = None
        self.logger = Logger(Config())
        self.quiet = False
        self.handlers: Dict[str, Callable[[argparse.Namespace, Config], None]] = {
            "gen-data": self._handle_gen_data,
            "train": self._handle_train,
            "decode": self._handle_decode,
            "eval": self._handle_eval,
            "analyze-gap": self._handle_analyze_gap,
            "avg-ckpt": self._handle_avg_ckpt,
            "train-lm": self._handle_train_lm,
            "experiment": self._handle_experiment,
            "config": self._handle_config,
        }

    def run(self, argv: Sequence[str]) -> int:
        """Parse, dispatch and map failures to exit codes"""
        if not self.ui.initialize():
            print("Failed to initialize UI system")
            return EXIT_RUNTIME

        command = "uasr"
        try:
            try:
                args = build_parser().parse_args(list(argv))
            except SystemExit as e:
                # --help / --version
                return int(e.code or 0)
            command = args.command
            self.quiet = args.quiet
            config = self._resolve_config(args)
            self.logger = Logger(config)
            self.logger.log_info(f"start: {' '.join(argv)}", command)
            self.logger.log_config(config, command)
            if not self.quiet:
                self.ui.show_header(command)
            self.handlers[command](args, config)
            self.logger.log_info("finished", command)
            return EXIT_OK

        except ValidationError as e:
            self.ui.hide_progress()
            self.ui.show_error(str(e))
            self.logger.log_error(e, command)
            return EXIT_VALIDATION
        except KeyboardInterrupt as e:
            self.ui.hide_progress()
            self.ui.show_error("Interrupted")
            self.logger.log_error(e, command)
            return EXIT_RUNTIME
        except UnifiedASRError as e:
            self.ui.hide_progress()
            self.ui.show_error(f"{type(e).__name__}: {e}")
            self.logger.log_error(e, command)
            return EXIT_RUNTIME
        except Exception as e:
            self.ui.hide_progress()
            self.ui.show_error(f"Unexpected error: {e}")
            self.logger.log_error(e, command)
            return EXIT_RUNTIME
        finally:
            self.ui.cleanup()

    # Configuration
    def _resolve_config(self, args: argparse.Namespace) -> Config:
        """Flags over config file over built-in defaults"""
        self.config_manager = ConfigManager(args.config)
        # The config command may create its file
        if args.config and not os.path.exists(args.config) and args.command != "config":
            raise ValidationError(f"config file not found: {args.config}")
        get = vars(args).get
        overrides: Dict[str, Any] = {"seed": get("seed")}
        if args.command == "gen-data":
            overrides.update({"data.n_utts": get("n_utts"), "data.n_test": get("n_test"),
                              "data.noise_sigma": get("noise")})
        if args.command in ("train", "experiment"):
            overrides.update({
                "train.epochs": get("epochs"),
                "train.batch_size": get("batch_size"),
                "train.peak_lr": get("peak_lr"),
                "train.warmup_steps": get("warmup"),
                "train.ctc_weight": get("ctc_weight"),
                "train.contrastive.bridge": get("bridge"),
                "train.contrastive.temperature": get("temperature"),
                "train.contrastive.num_distractors": get("distractors"),
                "train.contrastive.ctl_weight": get("ctl_weight"),
            })
        if args.command == "decode":
            overrides.update({
                "decode.passes": get("passes"),
                "decode.beam": get("beam"),
                "decode.lm_path": get("lm"),
                "decode.lm_weight": get("lm_weight"),
                "decode.ctc_weight": get("ctc_weight"),
                "decode.workers": get("workers"),
                "decode.rescore_full_context": get("full_context_rescore"),
            })
        if args.command == "analyze-gap":
            overrides.update({"analysis.sample_size": get("sample_size")})
            if get("chunks") is not None:
                chunks = _chunk_list(args.chunks)
                if not chunks or None in chunks:
                    raise ValidationError("chunk must be ≥ 1 or 'full'")
                overrides["analysis.chunks"] = chunks
        if args.command == "avg-ckpt":
            overrides.update({"train.top_k": get("k")})

        config = self.config_manager.apply_overrides(overrides)
        # Chunk "full" maps to None, which apply_overrides would skip
        if args.command == "decode" and args.chunk is not None:
            config.decode.chunk = parse_chunk(args.chunk)
        # An invalid file can still be inspected, edited or reset
        if args.command != "config":
            issues = self.config_manager.validate()
            if issues:
                raise ValidationError("; ".join(issues))
        return config

    def _write_manifest(self, command: str, config: Config, out: str, single_file: bool,
                        inputs: Dict[str, Optional[str]], outputs: Dict[str, Optional[str]]) -> str:
        manifest = RunManifest(
            command=command,
            config=config.to_dict(),
            seed=config.seed,
            inputs=inputs,
            outputs=outputs,
            created=datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        )
        path = _manifest_path(out, single_file)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(manifest.to_dict(), f, indent=4, ensure_ascii=False)
        self.logger.log_info(f"manifest written to {path}", command)
        return path

    def _require_file(self, path: Optional[str], what: str):
        if path and not os.path.isfile(path):
            raise ValidationError(f"{what} not found: {path}")

    def _load_model(self, path: str, config: Config) -> Checkpoint:
        """Checkpoint's model config replaces the configured one"""
        self._require_file(path, "checkpoint")
        checkpoint = load_checkpoint(path)
        config.model = checkpoint.config
        return checkpoint

    def _load(self, path: str, config: Config):
        self._require_file(path, "corpus")
        corpus = load_corpus(path, config.model.vocab)
        if corpus and corpus[0].feature_dim != config.model.feature_dim:
            raise ValidationError(f"{path}: {corpus[0].feature_dim} features per frame, model expects "
                                  f"{config.model.feature_dim}")
        return corpus

    def _table(self, title: str, columns: List[str], rows: List[List[Any]]):
        if not self.quiet:
            self.ui.show_table(title, columns, rows)

    # Command handlers
    def _handle_gen_data(self, args: argparse.Namespace, config: Config):
        data = config.data
        self.ui.show_progress("Generating corpus")
        corpus = gen_corpus(config.seed, data.n_utts, config.model.vocab, config.model.feature_dim,
                            data.noise_sigma)
        train, test = split_corpus(corpus, data.n_test)
        train_path = os.path.join(args.out, "train.jsonl")
        test_path = os.path.join(args.out, "test.jsonl")
        save_corpus(train, train_path)
        save_corpus(test, test_path)
        self.ui.hide_progress()
        self._write_manifest(args.command, config, args.out, False, {},
                             {"train": train_path, "test": test_path})
        self.ui.show_success(f"Wrote {len(train)} train / {len(test)} test utterances to {args.out}")

    def _split_validation(self, train_path: str, valid_path: Optional[str], config: Config):
        train = self._load(train_path, config)
        if valid_path:
            return train, self._load(valid_path, config)
        if len(train) < 2:
            raise ValidationError("need at least two training utterances to hold out a validation split")
        return split_corpus(train, max(1, len(train) // 10))

    def _training_callbacks(self):
        def on_step(epoch: int, index: int, total: int, breakdown):
            self.ui.show_progress(f"epoch {epoch} · loss {breakdown.total:.3f}", 100.0 * index / total)

        def on_epoch(epoch: int, result):
            self.ui.hide_progress()
            self.ui.show_info(f"epoch {epoch}: val_loss {result.loss:.4f}, CER full {result.cer_full:.4f}, "
                              f"CER chunk {result.cer_chunk:.4f}")
        return on_step, on_epoch

    def _handle_train(self, args: argparse.Namespace, config: Config):
        train, valid = self._split_validation(args.train, args.valid, config)
        on_step, on_epoch = self._training_callbacks()
        trainer = Trainer(config, train, valid, args.out, self.logger, on_step, on_epoch)
        result = trainer.run()
        self.ui.hide_progress()
        outputs = {
            "average": result.average_path,
            "train_log": os.path.join(args.out, "train_log.csv"),
            "validation": os.path.join(args.out, "validation.csv"),
        }
        outputs.update({f"epoch_{i + 1:03d}": path for i, path in enumerate(result.checkpoints)})
        self._write_manifest(args.command, config, args.out, False,
                             {"train": args.train, "valid": args.valid}, outputs)
        if not self.quiet:
            self.ui.show_summary("Training finished", {
                "averaged checkpoint": result.average_path,
                "validation loss": result.validation.loss,
                "CER full": result.validation.cer_full,
                f"CER chunk {config.train.validation_chunk}": result.validation.cer_chunk,
            })

    def _handle_decode(self, args: argparse.Namespace, config: Config):
        checkpoint = self._load_model(args.ckpt, config)
        corpus = self._load(args.corpus, config)
        lm = None
        if config.decode.lm_path:
            self._require_file(config.decode.lm_path, "language model")
            lm = read_arpa(config.decode.lm_path)
        self.ui.show_progress(f"Decoding {len(corpus)} utterances (chunk {format_chunk(config.decode.chunk)}, "
                              f"pass {config.decode.passes})")
        results = decode_corpus(corpus, checkpoint.params, config.model, config.decode, lm)
        write_nbest(results, args.out)
        self.ui.hide_progress()
        self._write_manifest(args.command, config, args.out, True,
                             {"ckpt": args.ckpt, "corpus": args.corpus, "lm": config.decode.lm_path},
                             {"nbest": args.out})
        self.ui.show_success(f"Wrote N-best lists for {len(results)} utterances to {args.out}")

    def _decode_settings(self, nbest_path: str) -> Config:
        """Decode settings recorded next to an N-best file, defaults when absent"""
        path = _manifest_path(nbest_path, True)
        if not os.path.exists(path):
            return Config()
        return ConfigManager(path).config

    def _handle_eval(self, args: argparse.Namespace, config: Config):
        self._require_file(args.nbest, "N-best file")
        results = {r.id: r for r in read_nbest(args.nbest)}
        corpus = self._load(args.corpus, config)
        missing = [u.id for u in corpus if u.id not in results]
        if missing:
            raise ValidationError(f"{len(missing)} corpus utterances have no N-best entry (first: {missing[0]})")

        decoded = self._decode_settings(args.nbest).decode
        passes = args.passes if args.passes is not None else decoded.passes
        if passes not in (1, 2):
            raise ValidationError("pass must be 1 or 2")
        if passes == 2 and any(h.aed_logscore is None for r in results.values() for h in r.hypotheses):
            raise ValidationError("N-best file holds first-pass scores only; use --pass 1")
        if passes == 1:
            hyps = [list(first_pass_best(results[u.id], decoded.lm_weight).tokens) for u in corpus]
        else:
            hyps = [list(results[u.id].best.tokens) for u in corpus]

        value = cer([u.tokens for u in corpus], hyps)
        mode = CHUNK_FULL if decoded.chunk is None else "streaming"
        row = CERRow(mode=mode, chunk=decoded.chunk, passes=passes, cer=value)
        write_cer_report([row], args.out)
        self._write_manifest(args.command, config, args.out, True,
                             {"nbest": args.nbest, "corpus": args.corpus}, {"cer": args.out})
        self._table("CER", ["mode", "chunk", "pass", "cer"],
                    [[row.mode, format_chunk(row.chunk), row.passes, row.cer]])
        self.ui.show_success(f"CER {value:.4f} written to {args.out}")

    def _handle_analyze_gap(self, args: argparse.Namespace, config: Config):
        checkpoint = self._load_model(args.ckpt, config)
        corpus = self._load(args.corpus, config)
        sample = select_sample(corpus, config.analysis.sample_size, config.seed)
        gap_path = os.path.join(args.out, "gap.csv")
        projection_path = os.path.join(args.out, "projection.csv")
        self.ui.show_progress(f"Encoding {len(sample)} utterances at chunks {config.analysis.chunks}")
        report = gap_report(checkpoint.params, config.model, sample, config.analysis.chunks, projection_path)
        write_gap_report(report, gap_path)
        self.ui.hide_progress()
        self._write_manifest(args.command, config, args.out, False,
                             {"ckpt": args.ckpt, "corpus": args.corpus},
                             {"gap": gap_path, "projection": projection_path})
        self._table("Representation gap", ["chunk", "mean cos", "sd cos", "uniformity s", "uniformity ns"],
                    [[r.chunk, r.mean_cos, r.sd_cos, r.uniformity_s, r.uniformity_ns] for r in report.rows])
        self.ui.show_success(f"Gap report written to {gap_path}")

    def _handle_avg_ckpt(self, args: argparse.Namespace, config: Config):
        for path in args.ckpts:
            self._require_file(path, "checkpoint")
        k = config.train.top_k
        if k > len(args.ckpts):
            raise ValidationError(f"k must lie in [1, {len(args.ckpts)}], got {k}")
        averaged = averaged_checkpoint(args.ckpts, k)
        save_checkpoint(averaged, args.out)
        config.model = averaged.config
        self._write_manifest(args.command, config, args.out, True,
                             {f"ckpt_{i}": p for i, p in enumerate(args.ckpts)}, {"ckpt": args.out})
        if not self.quiet:
            self.ui.show_summary("Averaged checkpoint", {
                "checkpoints averaged": k,
                "parameters": sum(parameter_summary(averaged.params).values()),
                "best validation loss": averaged.val_loss,
                "step": averaged.step,
            })
        self.ui.show_success(f"Wrote {args.out}")

    def _handle_train_lm(self, args: argparse.Namespace, config: Config):
        corpus = self._load(args.corpus, config)
        lm = train_ngram([u.tokens for u in corpus], args.order, config.model.vocab_size)
        write_arpa(lm, args.out)
        self._write_manifest(args.command, config, args.out, True,
                             {"corpus": args.corpus}, {"lm": args.out})
        self.ui.show_success(f"Wrote {args.order}-gram LM to {args.out}")

    def _handle_experiment(self, args: argparse.Namespace, config: Config):
        bridges = [b.strip() for b in args.bridges.split(",") if b.strip()]
        chunks = _chunk_list(args.chunks)
        if not chunks:
            raise ValidationError("experiment needs at least one decoding chunk")
        train, valid = self._split_validation(args.train, args.valid, config)
        test = self._load(args.test, config)
        lm = None
        if args.lm:
            self._require_file(args.lm, "language model")
            lm = read_arpa(args.lm)
            config.decode.lm_path = args.lm
        on_step, on_epoch = self._training_callbacks()
        report = run_experiment(config, bridges, train, valid, test, args.out, chunks, lm,
                                self.logger, on_step, on_epoch)
        self.ui.hide_progress()
        self._write_manifest(args.command, config, args.out, False,
                             {"train": args.train, "valid": args.valid, "test": args.test, "lm": args.lm},
                             {"report_csv": os.path.join(args.out, "report.csv"),
                              "report_md": os.path.join(args.out, "report.md")})
        rows = [[bridge, passes] + [report.cer(bridge, passes, c) for c in chunks]
                for bridge in report.bridges for passes in (1, 2)]
        self._table("Bridge ablation (CER)", ["bridge", "pass"] + [format_chunk(c) for c in chunks], rows)
        self.ui.show_success(f"Experiment report written to {args.out}")

    def _handle_config(self, args: argparse.Namespace, config: Config):
        manager = self.config_manager
        if args.reset and not manager.reset_to_defaults():
            raise UnifiedASRError(f"cannot write config file {manager.config_path}")
        if args.assignments:
            updates = dict(_assignment(item) for item in args.assignments)
            if not manager.update_config(updates):
                raise UnifiedASRError(f"cannot write config file {manager.config_path}")
            self.logger.log_info(f"updated {', '.join(updates)} in {manager.config_path}", args.command)

        config = manager.config
        logger = Logger(config)
        if args.clear_log:
            if logger.clear_log():
                self.ui.show_info(f"Cleared {logger.get_log_path()}")
            else:
                self.ui.show_info("Logging is disabled; nothing to clear")
        if not self.quiet:
            self.ui.show_summary(f"Configuration ({manager.config_path})", {
                "seed": config.seed,
                "bridge": config.train.contrastive.bridge,
                "chunk policy": config.train.chunk_policy.mode,
                "decode chunk": format_chunk(config.decode.chunk),
                "log file": logger.get_log_path(),
                "log size (bytes)": logger.get_log_size(),
            })

        issues = manager.validate()
        if issues:
            raise ValidationError("; ".join(issues))
        if args.reset or args.assignments:
            self.ui.show_success(f"Saved {manager.config_path}")
        else:
            self.ui.show_success("Configuration is valid")


def cli_dispatch(argv: Sequence[str], ui: Optional[UIInterface] = None) -> int:
    """Run one subcommand; returns the process exit code"""
    return UnifiedASRApp(ui).run(argv)
