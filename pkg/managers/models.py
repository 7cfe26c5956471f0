from flask_sqlalchemy import SQLAlchemy
from datetime import datetime

db_sql = SQLAlchemy()

# --------------------------------------------------------------------------
# ריצות אימון
# --------------------------------------------------------------------------

class TrainingRun(db_sql.Model):
    __tablename__ = 'training_runs'
    id = db_sql.Column(db_sql.Integer, primary_key=True)
    created_at = db_sql.Column(db_sql.DateTime, default=datetime.utcnow, index=True)
    hidden_size = db_sql.Column(db_sql.Integer, nullable=False, index=True)
    residual = db_sql.Column(db_sql.Boolean, default=False)
    preemph = db_sql.Column(db_sql.String(10), nullable=False, index=True)
    seed = db_sql.Column(db_sql.Integer, nullable=False)
    copy_index = db_sql.Column(db_sql.Integer, default=0)
    epochs = db_sql.Column(db_sql.Integer)
    test_loss = db_sql.Column(db_sql.Float)
    checkpoint_path = db_sql.Column(db_sql.String(500))
    is_best = db_sql.Column(db_sql.Boolean, default=False, index=True)

    epoch_logs = db_sql.relationship(
        'EpochLog', backref='run', lazy='dynamic',
        order_by='EpochLog.epoch', cascade='all, delete-orphan'
    )

    def to_dict(self) -> dict:
        return {
            'id': self.id,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'hidden_size': self.hidden_size,
            'residual': self.residual,
            'preemph': self.preemph,
            'seed': self.seed,
            'copy_index': self.copy_index,
            'epochs': self.epochs,
            'test_loss': self.test_loss,
            'checkpoint_path': self.checkpoint_path,
            'is_best': self.is_best,
        }


class EpochLog(db_sql.Model):
    __tablename__ = 'epoch_logs'
    id = db_sql.Column(db_sql.Integer, primary_key=True)
    run_id = db_sql.Column(db_sql.Integer, db_sql.ForeignKey('training_runs.id'), nullable=False, index=True)
    epoch = db_sql.Column(db_sql.Integer, nullable=False)
    esr = db_sql.Column(db_sql.Float)
    dc = db_sql.Column(db_sql.Float)
    total = db_sql.Column(db_sql.Float)
    seconds = db_sql.Column(db_sql.Float)

    def to_dict(self) -> dict:
        return {'epoch': self.epoch, 'esr': self.esr, 'dc': self.dc, 'total': self.total, 'seconds': self.seconds}

# --------------------------------------------------------------------------
# דוחות הערכה (מטריצת הפסדים)
# --------------------------------------------------------------------------

class EvalReport(db_sql.Model):
    __tablename__ = 'eval_reports'
    id = db_sql.Column(db_sql.Integer, primary_key=True)
    created_at = db_sql.Column(db_sql.DateTime, default=datetime.utcnow, index=True)
    test_input = db_sql.Column(db_sql.String(500))
    test_target = db_sql.Column(db_sql.String(500))

    rows = db_sql.relationship(
        'LossMatrixRow', backref='report', lazy='select', cascade='all, delete-orphan'
    )

    def to_dict(self, with_rows: bool = False) -> dict:
        doc = {
            'id': self.id,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'test_input': self.test_input,
            'test_target': self.test_target,
        }
        if with_rows:
            doc['rows'] = [r.to_dict() for r in self.rows]
        return doc


class LossMatrixRow(db_sql.Model):
    __tablename__ = 'loss_matrix_rows'
    id = db_sql.Column(db_sql.Integer, primary_key=True)
    report_id = db_sql.Column(db_sql.Integer, db_sql.ForeignKey('eval_reports.id'), nullable=False, index=True)
    hidden_size = db_sql.Column(db_sql.Integer)
    trained_preemph = db_sql.Column(db_sql.String(10))
    # ESR כשבר (לא באחוזים)
    loss_none = db_sql.Column(db_sql.Float)
    loss_hp = db_sql.Column(db_sql.Float)
    loss_fd = db_sql.Column(db_sql.Float)
    loss_aw = db_sql.Column(db_sql.Float)
    dc = db_sql.Column(db_sql.Float)

    def to_dict(self) -> dict:
        return {
            'hidden_size': self.hidden_size,
            'trained_preemph': self.trained_preemph,
            'loss_none': self.loss_none,
            'loss_hp': self.loss_hp,
            'loss_fd': self.loss_fd,
            'loss_aw': self.loss_aw,
            'dc': self.dc,
        }
