import os
import sys
import json
import logging
import argparse
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Text

import pandas as pd

from .__about__ import __title__, __version__
from .base import SEED_ENV_VAR, build_provenance, resolve_seed
from .config_parser import ConfigParser
from .dataset import CorpusManifest, DatasetBuilder, load_dataset, load_manifest, resolve_paths, save_dataset, save_manifest, split_graphs
from .exceptions import IrisGraphException
from .experiments import ExperimentReport, ExperimentRunner, format_table, select_best_configurations, write_report
from .graph_extract import GraphExtractor, SourceId, node_count_histogram
from .gsnn import GSNNTrainer, load_checkpoint, save_checkpoint
from .imaging import Preprocessor, load_image, save_pgm
from .serialization import load_graph_archive, save_graph_archive
from .synthetic import SyntheticSpec, generate_synthetic_corpus

logger = logging.getLogger('iris_graph.cli')

# command-line flag -> configuration key
FLAG_KEYS = {
    'alpha': 'ALPHA',
    'delta': 'DELTA',
    'node_cap': 'NODE_CAP',
    'users': 'USERS',
    'node_caps': 'NODE_CAPS',
    'alphas': 'ALPHAS',
    'user_counts': 'USER_COUNTS',
    'retention_floor': 'RETENTION_FLOOR',
    'reflect_threshold': 'REFLECT_THRESHOLD',
    'remove_reflections': 'REMOVE_REFLECTIONS',
    'equalize': 'EQUALIZE',
    'learning_rate': 'learning_rate',
    'batch_size': 'batch_size',
    'max_epochs': 'max_epochs',
    'patience': 'patience',
    'adjacency_mode': 'adjacency_mode',
    'combine_mode': 'combine_mode',
}


@dataclass
class RunConfig:
    """
    The fully resolved settings of one invocation: packaged defaults, then the --config file, then flags.
    """
    config: Dict
    seed: int
    jobs: int

    def provenance(self, **extra) -> Dict:
        return build_provenance(self.config, self.seed, **extra)


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    defaults = ConfigParser()
    file_values = ConfigParser(args.config, external=True).get_config_dict() if args.config else {}
    flags = {key: getattr(args, attr) for attr, key in FLAG_KEYS.items() if getattr(args, attr, None) is not None}

    config = defaults.merged_with({**file_values, **flags})

    file_seed = next((value for key, value in file_values.items() if key.upper() == 'SEED'), None)
    if args.seed is not None:
        seed = int(args.seed)
    elif file_seed is not None:
        seed = int(file_seed)
    else:
        seed = resolve_seed(None, defaults.get_config_dict())
    config['SEED'] = seed

    jobs = int(args.jobs if args.jobs is not None else config['JOBS'])
    return RunConfig(config=config, seed=seed, jobs=max(jobs, 1))


def _write_json(payload: Dict, path: Optional[Text] = None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, default=str) + '\n'
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, 'w') as f:
            f.write(text)


def _load_corpus(path: Text, seed: int):
    return resolve_paths(load_manifest(path, seed), os.path.dirname(os.path.abspath(path)))


def _source_ids(entries: pd.DataFrame) -> List[SourceId]:
    sessions = entries['session'].astype(str).tolist() if 'session' in entries.columns else [''] * len(entries)
    indices = entries.groupby('user_id').cumcount().tolist()
    return [SourceId(str(user), session, int(index)) for user, session, index in zip(entries['user_id'], sessions, indices)]


def cmd_preprocess(args: argparse.Namespace, run: RunConfig) -> int:
    corpus = _load_corpus(args.manifest, run.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    if not len(corpus):
        logger.warning(f"Manifest {args.manifest} is empty; nothing to preprocess.")

    preprocessor = Preprocessor(run.config)
    entries = corpus.entries.copy()
    written, failures = [], 0

    for position, row in enumerate(entries.itertuples(index=False)):
        name = f"{row.user_id}_{position:05d}.pgm"
        try:
            image = preprocessor.preprocess_file(row.image_path, row.mask_path or None)
            save_pgm(image, os.path.join(args.out_dir, name))
        except (IrisGraphException, OSError) as e:
            logger.error(f"Cannot preprocess {row.image_path}: {e}")
            failures += 1
            continue
        written.append(position)

    out = entries.iloc[written].copy()
    out['image_path'] = [f"{user}_{position:05d}.pgm" for user, position in zip(out['user_id'], written)]
    out['mask_path'] = ''
    save_manifest(CorpusManifest(out, corpus.seed), os.path.join(args.out_dir, 'manifest.csv'))
    _write_json(run.provenance(stage='preprocess', images=len(written), failures=failures), os.path.join(args.out_dir, 'provenance.json'))

    logger.info(f"Preprocessed {len(written)} image(s), {failures} failure(s).")
    return 1 if failures else 0


def cmd_extract(args: argparse.Namespace, run: RunConfig) -> int:
    corpus = _load_corpus(args.manifest, run.seed)
    images, ids, failures = [], [], 0

    for source_id, path in zip(_source_ids(corpus.entries), corpus.entries['image_path']):
        try:
            images.append(load_image(path))
            ids.append(source_id)
        except (IrisGraphException, OSError) as e:
            logger.error(f"Cannot read {path}: {e}")
            failures += 1

    graphs = GraphExtractor(run.config).extract_many(images, ids, run.jobs)
    usable = [graph for graph in graphs if graph.usable]

    provenance = run.provenance(stage='extract', graphs=len(usable), unusable=len(graphs) - len(usable), failures=failures)
    save_graph_archive(usable, args.out, provenance)
    node_count_histogram(graphs, args.bin_width).to_csv(sys.stdout, index=False)

    logger.info(f"Wrote {len(usable)} graph(s) to {args.out}; {len(graphs) - len(usable)} unusable, {failures} unreadable.")
    return 1 if failures else 0


def cmd_dataset(args: argparse.Namespace, run: RunConfig) -> int:
    graphs, source = load_graph_archive(args.archive)
    splits = split_graphs(
        [graph for graph in graphs if graph.usable],
        run.config['SPLIT_RATIOS'],
        run.seed,
        int(run.config['MIN_IMAGES_PER_USER']),
    )
    pairs_by_split, used, removed = DatasetBuilder(run.config).build(splits, run.seed)

    os.makedirs(args.out_dir, exist_ok=True)
    for name, pairs in pairs_by_split.items():
        provenance = run.provenance(stage='dataset', split=name, used=used, removed=removed, source=source)
        save_dataset(pairs, os.path.join(args.out_dir, f"{name}.irds"), provenance)

    logger.info(f"Node cap {run.config['NODE_CAP']}: {used} graph(s) used, {removed} removed.")
    return 0


def cmd_train(args: argparse.Namespace, run: RunConfig) -> int:
    train_pairs, _ = load_dataset(args.train)
    val_pairs, _ = load_dataset(args.val)

    trainer = GSNNTrainer(run.config, seed=run.seed)
    params, history = trainer.fit(train_pairs, val_pairs)
    metrics = trainer.evaluate(params, val_pairs)

    os.makedirs(args.out_dir, exist_ok=True)
    save_checkpoint(params, os.path.join(args.out_dir, 'model.irmp'), run.provenance(stage='train', val_metrics=metrics.to_dict()))
    history.to_csv(os.path.join(args.out_dir, 'history.csv'), index=False)

    logger.info(f"Best validation F1 {metrics.f1:.4f} after {len(history)} epoch(s).")
    return 0


def cmd_eval(args: argparse.Namespace, run: RunConfig) -> int:
    trainer = GSNNTrainer(run.config, seed=run.seed)
    params, model_provenance = load_checkpoint(args.checkpoint, expected=trainer.init_params())
    pairs, _ = load_dataset(args.dataset)

    metrics = trainer.evaluate(params, pairs)
    _write_json(run.provenance(stage='eval', pairs=len(pairs), metrics=metrics.to_dict(), model=model_provenance), args.out)
    return 0


def _run_experiment(args: argparse.Namespace, run: RunConfig, name: Text) -> int:
    corpus = _load_corpus(args.manifest, run.seed)
    runner = ExperimentRunner(run.config, run.seed, run.jobs)

    if name == 'exp1':
        report = runner.experiment1(corpus)
    elif name == 'exp2':
        report = runner.experiment2(corpus)
    else:
        configurations = args.configs
        if configurations is None and args.from_report:
            rows = pd.read_csv(args.from_report, dtype={'alpha': str}, keep_default_na=False, na_values=[''])
            configurations = select_best_configurations(ExperimentReport('exp2', rows))
        report = runner.experiment3(corpus, configurations)

    write_report(report, args.out_dir, reference=run.config['REFERENCE_TABLES'].get(name))
    sys.stdout.write(format_table(report))
    return 0


def cmd_exp1(args: argparse.Namespace, run: RunConfig) -> int:
    return _run_experiment(args, run, 'exp1')


def cmd_exp2(args: argparse.Namespace, run: RunConfig) -> int:
    return _run_experiment(args, run, 'exp2')


def cmd_exp3(args: argparse.Namespace, run: RunConfig) -> int:
    return _run_experiment(args, run, 'exp3')


def cmd_synth(args: argparse.Namespace, run: RunConfig) -> int:
    spec = SyntheticSpec(
        n_users=args.n_users,
        images_per_user=args.images_per_user,
        image_size=args.image_size,
        perturbation=args.perturbation,
        seed=run.seed,
    )
    manifest = generate_synthetic_corpus(spec, args.out_dir)
    _write_json(run.provenance(stage='synth', synthetic=asdict(spec), images=len(manifest)), os.path.join(args.out_dir, 'provenance.json'))
    return 0


def _int_list(text: Text) -> List[int]:
    try:
        return [int(value) for value in text.split(',') if value.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _text_list(text: Text) -> List[Text]:
    return [value.strip() for value in text.split(',') if value.strip()]


def _configurations(text: Text) -> List[Dict]:
    configurations = []
    for item in _text_list(text):
        alpha, _, cap = item.partition(':')
        if not cap.isdigit():
            raise argparse.ArgumentTypeError(f"expected alpha:cap items such as 1/7:200, got {item!r}")
        configurations.append({'alpha': alpha, 'cap': int(cap)})
    return configurations


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="YAML file of configuration overrides.")
    common.add_argument('--seed', type=int, help=f"Run seed; falls back to SEED in --config, then ${SEED_ENV_VAR}.")
    common.add_argument('--jobs', type=int, help="Worker processes; outputs do not depend on it.")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true', help="Log debug messages.")
    verbosity.add_argument('--quiet', action='store_true', help="Log warnings and errors only.")
    return common


def _imaging_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--reflect-threshold', dest='reflect_threshold', type=int)
    parser.add_argument('--no-reflect', dest='remove_reflections', action='store_const', const=False, help="Skip reflection removal.")
    parser.add_argument('--equalize', choices=['stretch', 'histogram'])


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--learning-rate', dest='learning_rate', type=float)
    parser.add_argument('--batch-size', dest='batch_size', type=int)
    parser.add_argument('--max-epochs', dest='max_epochs', type=int)
    parser.add_argument('--patience', type=int)
    parser.add_argument('--adjacency-mode', dest='adjacency_mode', choices=['binary', 'weighted'])
    parser.add_argument('--combine-mode', dest='combine_mode', choices=['absolute', 'signed'])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=__title__, description="Iris images to graphs, and graph siamese verification.")
    parser.add_argument('--version', action='version', version=f"{__title__} {__version__}")
    commands = parser.add_subparsers(dest='command', metavar='command', required=True)
    common = _common_flags()

    sub = commands.add_parser('preprocess', parents=[common], help="Crop, resize, enhance and filter the images of a manifest.")
    sub.add_argument('--manifest', required=True)
    sub.add_argument('--out-dir', dest='out_dir', required=True)
    sub.add_argument('--alpha', help="Spectral filter weight, e.g. 1/7; 'none' disables it.")
    _imaging_flags(sub)
    sub.set_defaults(handler=cmd_preprocess)

    sub = commands.add_parser('extract', parents=[common], help="Extract graphs from preprocessed images into an archive.")
    sub.add_argument('--manifest', required=True)
    sub.add_argument('--out', required=True)
    sub.add_argument('--delta', type=int)
    sub.add_argument('--bin-width', dest='bin_width', type=int, default=50, help="Node-count histogram bin width.")
    sub.set_defaults(handler=cmd_extract)

    sub = commands.add_parser('dataset', parents=[common], help="Split, cap, pad and pair the graphs of an archive.")
    sub.add_argument('--archive', required=True)
    sub.add_argument('--out-dir', dest='out_dir', required=True)
    sub.add_argument('--node-cap', dest='node_cap', type=int)
    sub.set_defaults(handler=cmd_dataset)

    sub = commands.add_parser('train', parents=[common], help="Train a model; writes a checkpoint and the history.")
    sub.add_argument('--train', required=True)
    sub.add_argument('--val', required=True)
    sub.add_argument('--out-dir', dest='out_dir', required=True)
    _training_flags(sub)
    sub.set_defaults(handler=cmd_train)

    sub = commands.add_parser('eval', parents=[common], help="Evaluate a checkpoint on a dataset.")
    sub.add_argument('--checkpoint', required=True)
    sub.add_argument('--dataset', required=True)
    sub.add_argument('--out', help="Metrics JSON file; standard output if omitted.")
    sub.add_argument('--adjacency-mode', dest='adjacency_mode', choices=['binary', 'weighted'])
    sub.add_argument('--combine-mode', dest='combine_mode', choices=['absolute', 'signed'])
    sub.set_defaults(handler=cmd_eval)

    for name, handler, text in (
        ('exp1', cmd_exp1, "Node-cap experiment."),
        ('exp2', cmd_exp2, "Filter weight x node-cap experiment."),
        ('exp3', cmd_exp3, "User-count experiment."),
    ):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.add_argument('--manifest', required=True)
        sub.add_argument('--out-dir', dest='out_dir', required=True)
        if name == 'exp3':
            sub.add_argument('--user-counts', dest='user_counts', type=_int_list)
            source = sub.add_mutually_exclusive_group()
            source.add_argument('--configs', type=_configurations, help="alpha:cap items, e.g. 1/7:200,1/5:250.")
            source.add_argument('--from-report', dest='from_report', help="An exp2 CSV report to take the two best configurations from.")
        else:
            sub.add_argument('--users', type=int)
            sub.add_argument('--node-caps', dest='node_caps', type=_int_list)
        if name == 'exp2':
            sub.add_argument('--alphas', type=_text_list)
            sub.add_argument('--retention-floor', dest='retention_floor', type=float)
        _imaging_flags(sub)
        _training_flags(sub)
        sub.set_defaults(handler=handler)

    sub = commands.add_parser('synth', parents=[common], help="Generate a synthetic corpus with a manifest.")
    sub.add_argument('--out-dir', dest='out_dir', required=True)
    sub.add_argument('--users', dest='n_users', type=int, default=10)
    sub.add_argument('--images-per-user', dest='images_per_user', type=int, default=20)
    sub.add_argument('--image-size', dest='image_size', type=int, default=200)
    sub.add_argument('--perturbation', type=float, default=0.08)
    sub.set_defaults(handler=cmd_synth)

    return parser


def main(argv: Optional[Sequence[Text]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif args.quiet:
        logging.getLogger().setLevel(logging.WARNING)

    try:
        return args.handler(args, resolve_run_config(args))
    except (IrisGraphException, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
