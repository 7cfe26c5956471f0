"""
RunManager: the run registry.
Stores trained copies with their epoch history and evaluation reports in the
SQL database, and serves them back to the portal.
"""

import logging
import threading
from pathlib import Path
from typing import List, Optional, Union

from managers.evaluation import LossMatrix
from managers.models import EpochLog, EvalReport, LossMatrixRow, TrainingRun, db_sql
from managers.training import MultiSeedResult, TrainingConfig

logger = logging.getLogger(__name__)


class RunManager:
    """
    כתיבה וקריאה של רישום הריצות.
    כל פעולת כתיבה היא commit יחיד; כישלון מבצע rollback ולא מפיל את האימון.
    Needs an active Flask application context.
    """
    _write_lock = threading.Lock()

    # --- כתיבה ---

    def record_training(self, result: MultiSeedResult, config: TrainingConfig, hidden_size: int,
                        residual: bool = False,
                        checkpoint_path: Optional[Union[str, Path]] = None) -> List[int]:
        """One TrainingRun per copy, epoch rows bulk-inserted. Returns run ids ([] on failure)."""
        with RunManager._write_lock:
            try:
                runs = []
                for k, seed in enumerate(result.seeds):
                    is_best = k == result.best_index
                    runs.append(TrainingRun(
                        hidden_size=hidden_size,
                        residual=residual,
                        preemph=config.preemph,
                        seed=seed,
                        copy_index=k,
                        epochs=config.epochs,
                        test_loss=result.scores[k],
                        checkpoint_path=str(checkpoint_path) if (is_best and checkpoint_path) else None,
                        is_best=is_best,
                    ))
                db_sql.session.add_all(runs)
                db_sql.session.flush()

                epoch_rows = []
                for run, history in zip(runs, result.histories):
                    for record in history:
                        epoch_rows.append(EpochLog(
                            run_id=run.id, epoch=record.epoch, esr=record.loss.esr,
                            dc=record.loss.dc, total=record.loss.total, seconds=record.seconds,
                        ))
                if epoch_rows:
                    db_sql.session.bulk_save_objects(epoch_rows)
                db_sql.session.commit()
                logger.info(f"💾 Recorded {len(runs)} run(s), {len(epoch_rows)} epoch rows")
                return [run.id for run in runs]
            except Exception as e:
                db_sql.session.rollback()
                logger.error(f"❌ Run registry write failed: {e}")
                return []

    def record_loss_matrix(self, matrix: LossMatrix, test_input: str = '', test_target: str = '') -> Optional[int]:
        with RunManager._write_lock:
            try:
                report = EvalReport(test_input=str(test_input), test_target=str(test_target))
                for row in matrix.rows:
                    report.rows.append(LossMatrixRow(
                        hidden_size=row.hidden_size,
                        trained_preemph=row.trained_preemph,
                        loss_none=row.losses['none'],
                        loss_hp=row.losses['hp'],
                        loss_fd=row.losses['fd'],
                        loss_aw=row.losses['aw'],
                        dc=row.dc,
                    ))
                db_sql.session.add(report)
                db_sql.session.commit()
                logger.info(f"💾 Recorded loss matrix report #{report.id} ({len(matrix.rows)} rows)")
                return report.id
            except Exception as e:
                db_sql.session.rollback()
                logger.error(f"❌ Report registry write failed: {e}")
                return None

    # --- קריאה ---

    def list_runs(self, preemph: Optional[str] = None, hidden_size: Optional[int] = None) -> List[TrainingRun]:
        query = TrainingRun.query
        if preemph:
            query = query.filter_by(preemph=preemph.lower())
        if hidden_size is not None:
            query = query.filter_by(hidden_size=hidden_size)
        return query.order_by(TrainingRun.created_at.desc(), TrainingRun.id.desc()).all()

    def get_run(self, run_id: int) -> Optional[TrainingRun]:
        return db_sql.session.get(TrainingRun, run_id)

    def get_epochs(self, run_id: int) -> Optional[List[EpochLog]]:
        run = self.get_run(run_id)
        if run is None:
            return None
        return run.epoch_logs.all()

    def list_reports(self) -> List[EvalReport]:
        return EvalReport.query.order_by(EvalReport.created_at.desc(), EvalReport.id.desc()).all()

    def get_report(self, report_id: int) -> Optional[EvalReport]:
        return db_sql.session.get(EvalReport, report_id)
