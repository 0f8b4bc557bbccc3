import os
import json
import time
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Text, Tuple

import numpy as np
import pandas as pd
from pandas import DataFrame

from .base import BaseComponent, build_provenance, resolve_seed
from .dataset import SPLIT_NAMES, CorpusManifest, DatasetBuilder, retention, split_corpus
from .exceptions import ConfigurationException, InsufficientDataException
from .graph_extract import GraphExtractor, IrisGraph, SourceId
from .gsnn import GSNNTrainer
from .imaging import Image, Preprocessor, format_alpha, parse_alpha

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    'alpha', 'cap', 'users', 'used', 'removed', 'retention', 'trained',
    'val_accuracy', 'val_f1', 'test_accuracy', 'test_f1', 'epochs',
]
METRIC_COLUMNS = ['val_accuracy', 'val_f1', 'test_accuracy', 'test_f1']

# columns a published row is matched on, per experiment
REFERENCE_KEYS = {
    'exp1': ['cap'],
    'exp2': ['alpha', 'cap'],
    'exp3': ['alpha', 'cap', 'users'],
}


@dataclass
class ExperimentReport:
    """
    One row per configuration. Metrics are fractions in [0, 1]. Configurations below the retention floor, and caps
    that leave a split without pairs, keep their counts but are not trained and have no metrics. Runtimes are kept
    apart from the rows.
    """
    name: Text
    rows: DataFrame
    runtimes: List[float] = field(default_factory=list)
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = self.rows.reindex(columns=REPORT_COLUMNS).reset_index(drop=True)
        for column in ('cap', 'users', 'used', 'removed', 'epochs'):
            self.rows[column] = self.rows[column].astype('Int64')
        self.rows['trained'] = self.rows['trained'].fillna(False).astype(bool)

    def __len__(self):
        return len(self.rows)


def _preprocess_job(args) -> Image:
    preprocessor, image_path, mask_path = args
    return preprocessor.preprocess_file(image_path, mask_path or None)


class ExperimentRunner(BaseComponent):
    """
    Runs the node-cap, filter and user-count experiments on one corpus.

    Users are drawn as prefixes of a single seeded permutation, so every smaller user set is contained in every
    larger one. Each user set is split once and the split is reused for all caps and filters. Preprocessed graphs
    are cached per filter and image, so a graph is extracted once per run.
    """

    def __init__(self, config=None, seed: Optional[int] = None, jobs: int = 1, **overrides):
        super().__init__(config, **overrides)

        self.seed = resolve_seed(seed, self.config)
        self.jobs = max(int(jobs), 1)
        self.builder = DatasetBuilder(self.config)
        self._graphs: Dict[Text, Dict[Text, IrisGraph]] = {}

    def select_users(self, corpus: CorpusManifest, count: int) -> CorpusManifest:
        users = corpus.users
        if count > len(users):
            raise InsufficientDataException(f"Asked for {count} users but the corpus has {len(users)}.")

        order = np.random.default_rng(self.seed).permutation(len(users))
        chosen = [users[i] for i in order[:count]]
        return corpus.select_users(chosen)

    def split(self, corpus: CorpusManifest) -> Dict[Text, CorpusManifest]:
        parts = split_corpus(corpus, self.config['SPLIT_RATIOS'], self.seed, int(self.config['MIN_IMAGES_PER_USER']))
        return dict(zip(SPLIT_NAMES, parts))

    def graphs(self, splits: Dict[Text, CorpusManifest], alpha: Optional[Fraction]) -> Dict[Text, List[IrisGraph]]:
        """
        Preprocess and extract the images of every split under one filter setting. Unusable graphs are dropped.
        """
        cache = self._graphs.setdefault(format_alpha(alpha), {})
        preprocessor = Preprocessor(self.config, ALPHA=format_alpha(alpha))
        extractor = GraphExtractor(self.config)

        missing = pd.concat([split.entries for split in splits.values()])
        missing = missing[~missing['image_path'].isin(list(cache))]
        if len(missing):
            tasks = [(preprocessor, row.image_path, row.mask_path) for row in missing.itertuples()]
            if self.jobs > 1 and len(tasks) > 1:
                with Pool(processes=self.jobs) as pool:
                    images = pool.map(_preprocess_job, tasks)
            else:
                images = [_preprocess_job(task) for task in tasks]

            indices = missing.groupby('user_id').cumcount().tolist()
            source_ids = [SourceId(str(user), '', int(i)) for user, i in zip(missing['user_id'], indices)]
            for path, graph in zip(missing['image_path'], extractor.extract_many(images, source_ids, self.jobs)):
                cache[path] = graph

        graphs = {}
        for name, split in splits.items():
            graphs[name] = [cache[path] for path in split.entries['image_path'] if cache[path].usable]
        return graphs

    def _cell(self, graphs: Dict[Text, List[IrisGraph]], cap: int) -> Tuple[Dict, float]:
        start = time.perf_counter()

        sizes = np.array([graph.n_nodes for split in graphs.values() for graph in split], dtype=np.int64)
        used = int((sizes <= cap).sum())
        removed = int(sizes.size - used)
        row = {'cap': cap, 'used': used, 'removed': removed, 'retention': retention(used, removed), 'trained': False}

        try:
            pairs, _, _ = self.builder.build(graphs, self.seed, cap)
        except InsufficientDataException as e:
            self.logger.warning(f"Cap {cap} cannot be trained: {e}")
            return row, time.perf_counter() - start

        empty = [name for name, split_pairs in pairs.items() if not split_pairs]
        if empty:
            self.logger.warning(f"Cap {cap} cannot be trained: no pairs in {', '.join(empty)}.")
            return row, time.perf_counter() - start

        trainer = GSNNTrainer(self.config, seed=self.seed)
        params, history = trainer.fit(pairs['train'], pairs['val'])
        val = trainer.evaluate(params, pairs['val'])
        test = trainer.evaluate(params, pairs['test'])

        row.update({
            'trained': True, 'val_accuracy': val.accuracy, 'val_f1': val.f1, 'test_accuracy': test.accuracy,
            'test_f1': test.f1, 'epochs': len(history),
        })
        return row, time.perf_counter() - start

    def _provenance(self, **extra) -> Dict:
        return build_provenance(self.config, self.seed, **extra)

    def experiment1(self, corpus: CorpusManifest, users: Optional[int] = None, node_caps: Optional[Sequence[int]] = None) -> ExperimentReport:
        """
        Train and evaluate one model per node cap on unfiltered images.

        :param corpus: the corpus manifest, with resolvable paths.
        :param users: the number of users. If not provided, USERS from the configuration is used.
        :param node_caps: the node caps. If not provided, NODE_CAPS from the configuration is used.
        :return: the ExperimentReport with one row per cap.
        """
        users = int(self._config_value('USERS', users))
        node_caps = [int(cap) for cap in self._config_value('NODE_CAPS', node_caps)]

        graphs = self.graphs(self.split(self.select_users(corpus, users)), None)
        rows, runtimes = [], []
        for cap in node_caps:
            self.logger.info(f"Experiment 1: {users} users, cap {cap}.")
            row, runtime = self._cell(graphs, cap)
            rows.append({'alpha': 'none', 'users': users, **row})
            runtimes.append(runtime)

        return ExperimentReport('exp1', DataFrame(rows), runtimes, self._provenance(users=users, node_caps=node_caps))

    def experiment2(self, corpus: CorpusManifest, users: Optional[int] = None, alphas: Optional[Sequence] = None, node_caps: Optional[Sequence[int]] = None, retention_floor: Optional[float] = None) -> ExperimentReport:
        """
        Grid over filter weights and node caps, plus the unfiltered baseline.

        A filtered configuration keeping less than ``retention_floor`` of its graphs is reported without training.
        The unfiltered rows are always trained and match experiment 1 under the same seed.

        :return: the ExperimentReport, baseline rows first, then one row per (alpha, cap).
        """
        users = int(self._config_value('USERS', users))
        alphas = [parse_alpha(alpha) for alpha in self._config_value('ALPHAS', alphas)]
        node_caps = [int(cap) for cap in self._config_value('NODE_CAPS', node_caps)]
        floor = float(self._config_value('RETENTION_FLOOR', retention_floor))

        splits = self.split(self.select_users(corpus, users))
        rows, runtimes = [], []

        for alpha in [None, *alphas]:
            graphs = self.graphs(splits, alpha)
            sizes = np.array([graph.n_nodes for split in graphs.values() for graph in split], dtype=np.int64)

            for cap in node_caps:
                used = int((sizes <= cap).sum())
                removed = int(sizes.size - used)
                kept = retention(used, removed)

                if alpha is not None and kept < floor:
                    self.logger.info(f"Experiment 2: alpha {format_alpha(alpha)}, cap {cap} keeps {kept:.2%}; not trained.")
                    row, runtime = {'cap': cap, 'used': used, 'removed': removed, 'retention': kept, 'trained': False}, 0.0
                else:
                    self.logger.info(f"Experiment 2: alpha {format_alpha(alpha)}, cap {cap}.")
                    row, runtime = self._cell(graphs, cap)

                rows.append({'alpha': format_alpha(alpha), 'users': users, **row})
                runtimes.append(runtime)

        provenance = self._provenance(users=users, alphas=[format_alpha(a) for a in alphas], node_caps=node_caps, retention_floor=floor)
        return ExperimentReport('exp2', DataFrame(rows), runtimes, provenance)

    def experiment3(self, corpus: CorpusManifest, configurations: Optional[Sequence[Dict]] = None, user_counts: Optional[Sequence[int]] = None) -> ExperimentReport:
        """
        Retrain each configuration from scratch for growing, nested user sets.

        :param corpus: the corpus manifest; it needs at least max(user_counts) users.
        :param configurations: dicts with 'alpha' and 'cap'. If not provided, EXP3_CONFIGS is used.
        :param user_counts: the user counts. If not provided, USER_COUNTS is used.
        :return: the ExperimentReport, grouped by configuration.
        """
        configurations = [
            {'alpha': parse_alpha(c['alpha']), 'cap': int(c['cap'])}
            for c in self._config_value('EXP3_CONFIGS', configurations)
        ]
        user_counts = [int(count) for count in self._config_value('USER_COUNTS', user_counts)]
        if not configurations:
            raise ConfigurationException("Experiment 3 needs at least one (alpha, cap) configuration.")

        rows, runtimes = [], []
        for configuration in configurations:
            for count in user_counts:
                self.logger.info(f"Experiment 3: alpha {format_alpha(configuration['alpha'])}, cap {configuration['cap']}, {count} users.")
                graphs = self.graphs(self.split(self.select_users(corpus, count)), configuration['alpha'])
                row, runtime = self._cell(graphs, configuration['cap'])
                rows.append({'alpha': format_alpha(configuration['alpha']), 'users': count, **row})
                runtimes.append(runtime)

        provenance = self._provenance(
            configurations=[{'alpha': format_alpha(c['alpha']), 'cap': c['cap']} for c in configurations],
            user_counts=user_counts,
        )
        return ExperimentReport('exp3', DataFrame(rows), runtimes, provenance)


def run_experiment1(corpus: CorpusManifest, users: int = 10, node_caps: Sequence[int] = (100, 150, 200, 250, 300), seed: Optional[int] = None, config: Optional[Dict] = None, jobs: int = 1) -> ExperimentReport:
    return ExperimentRunner(config, seed, jobs).experiment1(corpus, users, node_caps)


def run_experiment2(corpus: CorpusManifest, users: int = 10, alphas: Optional[Sequence] = None, node_caps: Sequence[int] = (100, 150, 200, 250, 300), retention_floor: float = 0.8, seed: Optional[int] = None, config: Optional[Dict] = None, jobs: int = 1) -> ExperimentReport:
    return ExperimentRunner(config, seed, jobs).experiment2(corpus, users, alphas, node_caps, retention_floor)


def run_experiment3(corpus: CorpusManifest, configurations: Optional[Sequence[Dict]] = None, user_counts: Sequence[int] = (10, 20, 30, 40, 50), seed: Optional[int] = None, config: Optional[Dict] = None, jobs: int = 1, exp2_report: Optional[ExperimentReport] = None) -> ExperimentReport:
    if configurations is None and exp2_report is not None:
        configurations = select_best_configurations(exp2_report)
    return ExperimentRunner(config, seed, jobs).experiment3(corpus, configurations, user_counts)


def select_best_configurations(report: ExperimentReport, k: int = 2) -> List[Dict]:
    """
    The k best trained filtered configurations of a filter grid report.

    Ranked by validation F1, then validation accuracy, then the smaller cap, then the smaller filter weight.

    :param report: an experiment 2 report.
    :param k: the number of configurations.
    :return: dicts with 'alpha' (a fraction string) and 'cap'.
    """
    rows = report.rows
    candidates = rows[rows['trained'] & (rows['alpha'] != 'none')].copy()
    if len(candidates) < k:
        raise InsufficientDataException(f"Only {len(candidates)} trained filtered configuration(s); {k} needed.")

    candidates['weight'] = [float(Fraction(alpha)) for alpha in candidates['alpha']]
    ranked = candidates.sort_values(
        ['val_f1', 'val_accuracy', 'cap', 'weight'], ascending=[False, False, True, True], kind='mergesort'
    )
    return [{'alpha': row.alpha, 'cap': int(row.cap)} for row in ranked.head(k).itertuples()]


def reference_diff(report: ExperimentReport, table: Sequence[Dict]) -> DataFrame:
    """
    Put the published rows next to a report. Report metrics are turned into percentages; every *_diff column is
    report minus reference. Rows without a published counterpart get blank reference cells.

    :param report: the ExperimentReport.
    :param table: the published rows of the same experiment (REFERENCE_TABLES[name]).
    :return: a DataFrame of the key columns and, per metric, the value, the reference and the difference.
    """
    keys = REFERENCE_KEYS[report.name]
    ours = report.rows[keys + METRIC_COLUMNS].copy()
    ours[METRIC_COLUMNS] = ours[METRIC_COLUMNS].astype(float) * 100.0

    reference = DataFrame(list(table))
    if 'alpha' in reference.columns:
        reference['alpha'] = [format_alpha(parse_alpha(alpha)) for alpha in reference['alpha']]
    reference = reference.reindex(columns=keys + METRIC_COLUMNS)

    merged = ours.merge(reference, on=keys, how='left', suffixes=('', '_reference'))
    for metric in METRIC_COLUMNS:
        merged[f"{metric}_diff"] = merged[metric] - merged[f"{metric}_reference"]

    ordered = keys + [f"{metric}{suffix}" for metric in METRIC_COLUMNS for suffix in ('', '_reference', '_diff')]
    return merged[ordered]


def _percent(value) -> Text:
    return '-' if pd.isna(value) else f"{100.0 * float(value):.2f}"


def format_table(report: ExperimentReport) -> Text:
    """
    A fixed-width table in the layout of the published tables, metrics in percent. Untrained cells show '-'.
    """
    rows = report.rows

    if report.name == 'exp2':
        frame = rows.assign(cell=[
            '-' if not trained else f"{_percent(acc)} / {_percent(f1)}"
            for trained, acc, f1 in zip(rows['trained'], rows['val_accuracy'], rows['val_f1'])
        ])
        grid = frame.pivot(index='alpha', columns='cap', values='cell')
        grid = grid.reindex(index=list(dict.fromkeys(frame['alpha'])))
        grid.columns = [f"N={cap}" for cap in grid.columns]
        return "validation accuracy / F1 (%)\n" + grid.to_string() + "\n"

    if report.name == 'exp3':
        layout = ['alpha', 'cap', 'users', 'retention']
    else:
        layout = ['cap', 'removed', 'used']

    table = rows[layout + METRIC_COLUMNS].copy()
    for column in METRIC_COLUMNS + (['retention'] if 'retention' in layout else []):
        table[column] = table[column].map(_percent)
    return table.to_string(index=False) + "\n"


def write_report(report: ExperimentReport, out_dir: Text, stem: Optional[Text] = None, reference: Optional[Sequence[Dict]] = None) -> Dict[Text, Text]:
    """
    Write a report as CSV, text table and JSON (rows, runtimes and provenance), plus a reference comparison CSV
    when published rows are given.

    :param report: the ExperimentReport.
    :param out_dir: the destination directory.
    :param stem: the file name stem. If not provided, the report name is used.
    :param reference: the published rows to compare with.
    :return: the written paths by kind.
    """
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or report.name
    paths = {kind: os.path.join(out_dir, f"{stem}.{kind}") for kind in ('csv', 'txt', 'json')}

    report.rows.to_csv(paths['csv'], index=False, float_format='%.6f', na_rep='')

    with open(paths['txt'], 'w') as f:
        f.write(format_table(report))

    payload = {
        'experiment': report.name,
        'provenance': report.provenance,
        'rows': json.loads(report.rows.to_json(orient='records')),
        'runtimes_s': [round(runtime, 3) for runtime in report.runtimes],
    }
    with open(paths['json'], 'w') as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write('\n')

    if reference:
        paths['reference'] = os.path.join(out_dir, f"{stem}_reference.csv")
        reference_diff(report, reference).to_csv(paths['reference'], index=False, float_format='%.2f', na_rep='')

    return paths
