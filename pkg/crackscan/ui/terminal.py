"""
Terminal reporting for crackscan
"""
from typing import Dict, Iterable, Optional, Sequence

from rich.box import ROUNDED
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from crackscan.evaluation.metrics import MetricRow
from crackscan.stats.multitest import EmpiricalNull, TestReport
from crackscan.ui.colors import COLOR_SCHEME, THEMES

console = Console()


class ReportConsole:
    """Rich output for pipeline runs: stage timings, test reports, metric tables"""
    def __init__(self, theme: str = "concrete", target: Optional[Console] = None):
        self.theme = theme
        self.colors = COLOR_SCHEME.get(theme, COLOR_SCHEME["concrete"])
        self.styles = THEMES.get(theme, THEMES["concrete"])
        self.console = target or console

    def display_header(self, command: str, config_hash: str, source: str):
        panel = Panel(
            f"[{self.colors['secondary']}]input:[/] {source}\n"
            f"[{self.colors['info']}]config:[/] {config_hash[:12]}",
            title=f"[{self.styles['heading']}]crackscan {command}[/]",
            border_style=self.colors["accent"],
            padding=(0, 2),
        )
        self.console.print(panel)

    def display_success(self, message: str):
        self.console.print(f"[{self.colors['success']}]{message}[/]")

    def display_error(self, message: str):
        self.console.print(f"[{self.colors['error']}]error:[/] {message}")

    def display_warning(self, message: str):
        self.console.print(f"[{self.colors['warning']}]{message}[/]")

    def display_info(self, message: str):
        self.console.print(f"[{self.colors['info']}]{message}[/]")

    def display_stage_timings(self, timings: Dict[str, float]):
        """Wall-clock seconds per stage"""
        table = Table(title="Stage timings", box=ROUNDED, border_style=self.styles["border"])
        table.add_column("Stage", style=self.styles["stage"])
        table.add_column("Seconds", justify="right", style=self.styles["value"])
        for stage, seconds in timings.items():
            table.add_row(stage, f"{seconds:.3f}")
        if timings:
            table.add_row("total", f"{sum(timings.values()):.3f}")
        self.console.print(table)

    def display_metrics(self, rows: Iterable[MetricRow], runtimes: Optional[Dict[str, float]] = None):
        """Precision / recall / F1 rows, optionally with a runtime column"""
        table = Table(title="Performance", box=ROUNDED, border_style=self.styles["border"])
        table.add_column("Stage", style=self.styles["stage"])
        table.add_column("Level")
        table.add_column("Precision", justify="right")
        table.add_column("Recall", justify="right")
        table.add_column("F1", justify="right")
        if runtimes is not None:
            table.add_column("Runtime (s)", justify="right")
        for row in rows:
            cells = [row.stage, row.level, f"{row.precision:.4f}", f"{row.recall:.4f}", f"{row.f1:.4f}"]
            if runtimes is not None:
                seconds = runtimes.get(row.stage)
                cells.append("-" if seconds is None else f"{seconds:.2f}")
            table.add_row(*cells)
        self.console.print(table)

    def display_reports(self, reports: Sequence[TestReport]):
        """One line per alpha: rejected windows and flagged cubes"""
        table = Table(title="Scan tests", box=ROUNDED, border_style=self.styles["border"])
        table.add_column("alpha", justify="right", style=self.styles["stage"])
        table.add_column("windows", justify="right")
        table.add_column("rejected", justify="right", style=self.styles["flagged"])
        table.add_column("cubes flagged", justify="right", style=self.styles["flagged"])
        for report in reports:
            table.add_row(
                f"{report.alpha:g}",
                str(report.decisions.size),
                str(report.rejected),
                f"{report.flagged} / {report.g ** 3}",
            )
        self.console.print(table)

    def display_null(self, null: EmpiricalNull):
        values = null.values
        self.console.print(
            Panel(
                f"[bold]windows:[/] {null.size}   [bold]g:[/] {null.g}   [bold]u:[/] {null.u}   "
                f"[bold]norm:[/] {null.norm}   [bold]alternative:[/] {null.alternative}\n"
                f"[bold]min:[/] {values[0]:.4g}   [bold]median:[/] {values[values.size // 2]:.4g}   "
                f"[bold]max:[/] {values[-1]:.4g}",
                title="Empirical null",
                border_style=self.colors["primary"],
            )
        )

