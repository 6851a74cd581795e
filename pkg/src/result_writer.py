import json
import logging
import math
import os
import threading
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import pandas as pd


class ResultSchema:
    """结果表的固定列顺序与列类型"""
    COLUMNS: List[str] = ['sweep_value', 'metric', 'gamma0_db', 'analytic', 'mc_mean', 'mc_half_width',
                          'engines_agree', 'converged']
    FLOAT_COLUMNS: List[str] = ['sweep_value', 'gamma0_db', 'analytic', 'mc_mean', 'mc_half_width']

    @classmethod
    def normalize(cls, table: pd.DataFrame) -> pd.DataFrame:
        """按固定列顺序整理结果表，并统一各列类型"""
        missing = [column for column in cls.COLUMNS if column not in table.columns]
        if missing:
            raise ValueError(f"结果表缺少列: {missing}")
        out = table[cls.COLUMNS].reset_index(drop=True).copy()
        for column in cls.FLOAT_COLUMNS:
            out[column] = out[column].astype(float)
        out['metric'] = out['metric'].astype(object)
        out['engines_agree'] = pd.Series([_optional_bool(v) for v in out['engines_agree']],
                                         index=out.index, dtype=object)
        out['converged'] = out['converged'].astype(bool)
        return out


def _optional_bool(value: Any) -> Optional[bool]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return bool(value)


def _optional_float(value: Any) -> Optional[float]:
    value = float(value)
    return None if math.isnan(value) else value


def table_to_json(table: pd.DataFrame, name: str = '') -> Dict[str, Any]:
    """结果表转为按扫描值嵌套的 JSON 对象"""
    table = ResultSchema.normalize(table)
    sweeps: List[Dict[str, Any]] = []
    for value, group in table.groupby('sweep_value', sort=False):
        rows = [{
            'metric': row.metric,
            'gamma0_db': _optional_float(row.gamma0_db),
            'analytic': _optional_float(row.analytic),
            'mc_mean': _optional_float(row.mc_mean),
            'mc_half_width': _optional_float(row.mc_half_width),
            'engines_agree': _optional_bool(row.engines_agree),
            'converged': bool(row.converged),
        } for row in group.itertuples(index=False)]
        sweeps.append({'sweep_value': float(value), 'rows': rows})
    return {'name': name, 'columns': ResultSchema.COLUMNS, 'sweeps': sweeps}


def table_from_json(obj: Union[str, Mapping[str, Any]]) -> pd.DataFrame:
    """解析 table_to_json 的输出（对象或 JSON 文本）为结果表"""
    if isinstance(obj, str):
        obj = json.loads(obj)
    records = []
    for sweep in obj.get('sweeps', []):
        for row in sweep['rows']:
            records.append({
                'sweep_value': sweep['sweep_value'],
                'metric': row['metric'],
                'gamma0_db': math.nan if row['gamma0_db'] is None else row['gamma0_db'],
                'analytic': math.nan if row['analytic'] is None else row['analytic'],
                'mc_mean': math.nan if row['mc_mean'] is None else row['mc_mean'],
                'mc_half_width': math.nan if row['mc_half_width'] is None else row['mc_half_width'],
                'engines_agree': row['engines_agree'],
                'converged': row['converged'],
            })
    return ResultSchema.normalize(pd.DataFrame(records, columns=ResultSchema.COLUMNS))


class ResultWriter:
    """
    结果写出器：CSV（每行一个结果）与 JSON（按扫描值嵌套），相同输入逐字节相同

    Args:
        output_dir (str): 输出目录
    """
    _write_lock = threading.Lock()  # 类变量，所有实例共享

    def __init__(self, output_dir: str = 'results'):
        self.output_dir = output_dir
        self.logger = logging.getLogger(__name__)
        self._ensure_dir_exists(output_dir)

    def write(self, table: pd.DataFrame, name: str, gains: Optional[pd.DataFrame] = None) -> List[Path]:
        table = ResultSchema.normalize(table)
        csv_path = Path(self.output_dir) / f"{name}.csv"
        json_path = Path(self.output_dir) / f"{name}.json"
        paths = [csv_path, json_path]
        with ResultWriter._write_lock:
            table.to_csv(csv_path, index=False, lineterminator='\n')
            with open(json_path, 'w', encoding='utf-8', newline='\n') as f:
                json.dump(table_to_json(table, name), f, ensure_ascii=False, indent=2)
                f.write('\n')
            if gains is not None:
                gains_path = Path(self.output_dir) / f"{name}_gains.csv"
                gains.to_csv(gains_path, index=False, lineterminator='\n')
                paths.append(gains_path)
        for path in paths:
            self.logger.info(f"结果已写入: {path}")
        return paths

    @staticmethod
    def _ensure_dir_exists(path: str):
        if not os.path.exists(path):
            os.makedirs(path)


def emit(table: pd.DataFrame, out_dir: str, name: str, gains: Optional[pd.DataFrame] = None) -> List[Path]:
    """写出 <name>.csv 与 <name>.json（给出 gains 时另写 <name>_gains.csv），返回文件路径"""
    return ResultWriter(out_dir).write(table, name, gains)
