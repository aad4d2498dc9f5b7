import csv
from typing import List, Sequence

import numpy as np

from .types import RunRecord, TrajectoryLog

TRAJECTORY_FIELDS = ['t', 'norm_x', 'phase', 'u_norm']
SWEEP_FIELDS = [
    'kind', 'algorithm', 'seed', 'n', 'k', 'm', 'sigma', 'status', 'steps_to_stabilize',
    'first_action_step', 'max_norm', 'rho_lhat', 'proj_err', 'btau_err', 'steps_mean', 'steps_std',
]


def _optional(value):
    return '' if value is None else value


class CSVGenerator:
    @staticmethod
    def generate_trajectory_csv(output_file: str, log: TrajectoryLog) -> None:
        """
        Write one row per recorded state.

        :param output_file: Path to the output CSV file.
        :param log: Trajectory to write. Row t carries the phase of the step t -> t+1 and the
                    norm of the input applied there; the last state repeats the final phase.
        """
        input_norms = np.linalg.norm(log.inputs, axis=1) if log.horizon else np.zeros(0)
        last_phase = log.phase_marks[-1] if log.phase_marks else 'stage1'
        with open(output_file, 'w', newline='', encoding='utf-8') as csvfile:
            writer = csv.DictWriter(csvfile, fieldnames=TRAJECTORY_FIELDS)
            writer.writeheader()
            for t, norm in enumerate(log.norms):
                in_range = t < log.horizon
                writer.writerow({
                    't': t,
                    'norm_x': float(norm),
                    'phase': log.phase_marks[t] if in_range else last_phase,
                    'u_norm': float(input_norms[t]) if in_range else 0.0,
                })

    @staticmethod
    def generate_sweep_csv(output_file: str, records: Sequence[RunRecord], summaries: Sequence = ()) -> None:
        """
        Write sweep results: run rows first, then one summary row per (algorithm, n, sigma).

        :param output_file: Path to the output CSV file.
        :param records: Run records, written in the given order.
        :param summaries: SweepSummary objects with the mean and standard deviation of the
                          steps to stabilize over the stabilized runs.
        """
        with open(output_file, 'w', newline='', encoding='utf-8') as csvfile:
            writer = csv.DictWriter(csvfile, fieldnames=SWEEP_FIELDS)
            writer.writeheader()
            for record in records:
                writer.writerow({
                    'kind': 'run',
                    'algorithm': record.algorithm,
                    'seed': record.seed,
                    'n': record.n,
                    'k': record.k,
                    'm': record.m,
                    'sigma': record.sigma,
                    'status': record.status,
                    'steps_to_stabilize': _optional(record.steps_to_stabilize),
                    'first_action_step': _optional(record.first_action_step),
                    'max_norm': record.max_norm,
                    'rho_lhat': record.rho_lhat,
                    'proj_err': record.proj_err,
                    'btau_err': record.btau_err,
                    'steps_mean': '',
                    'steps_std': '',
                })
            for summary in summaries:
                row = {name: '' for name in SWEEP_FIELDS}
                row.update({
                    'kind': 'summary',
                    'algorithm': summary.algorithm,
                    'n': summary.n,
                    'sigma': summary.sigma,
                    'steps_mean': summary.steps_mean,
                    'steps_std': summary.steps_std,
                })
                writer.writerow(row)

    @staticmethod
    def read_sweep_csv(input_file: str) -> List[dict]:
        with open(input_file, 'r', newline='', encoding='utf-8') as csvfile:
            return list(csv.DictReader(csvfile))
