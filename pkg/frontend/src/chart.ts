/** Tiny canvas chart: log-scale relative displacement per iteration, with
 *  the stop tolerance as a dashed line, plus the energy on a second scale. */
import { IterationRecord } from "./api.js";

export class ConvergenceChart {
  private ctx: CanvasRenderingContext2D;

  constructor(private canvas: HTMLCanvasElement, private stopTol = 3e-3) {
    this.ctx = canvas.getContext("2d")!;
  }

  draw(trace: IterationRecord[]): void {
    const { ctx, canvas } = this;
    const w = (canvas.width = canvas.clientWidth * (window.devicePixelRatio || 1));
    const h = (canvas.height = canvas.clientHeight * (window.devicePixelRatio || 1));
    ctx.clearRect(0, 0, w, h);
    if (trace.length < 2) return;

    const pad = 6;
    const rels = trace.map((r) => Math.max(r.rel_displacement, 1e-12));
    const logs = rels.map(Math.log10);
    const lo = Math.min(...logs, Math.log10(this.stopTol)) - 0.2;
    const hi = Math.max(...logs) + 0.2;
    const x = (i: number) => pad + (i / (trace.length - 1)) * (w - 2 * pad);
    const yRel = (v: number) => h - pad - ((Math.log10(v) - lo) / (hi - lo)) * (h - 2 * pad);

    // stop tolerance
    ctx.strokeStyle = "#b3564a";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(pad, yRel(this.stopTol));
    ctx.lineTo(w - pad, yRel(this.stopTol));
    ctx.stroke();
    ctx.setLineDash([]);

    // relative displacement
    ctx.strokeStyle = "#6aa7e8";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    trace.forEach((r, i) => {
      const px = x(i);
      const py = yRel(Math.max(r.rel_displacement, 1e-12));
      i === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
    });
    ctx.stroke();

    // energy, normalized to its own range
    const energies = trace.map((r) => r.energy);
    const eLo = Math.min(...energies);
    const eHi = Math.max(...energies);
    const yE = (v: number) =>
      h - pad - ((v - eLo) / Math.max(eHi - eLo, 1e-12)) * (h - 2 * pad);
    ctx.strokeStyle = "#7fc87f";
    ctx.lineWidth = 1.0;
    ctx.beginPath();
    trace.forEach((r, i) => {
      const px = x(i);
      const py = yE(r.energy);
      i === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
    });
    ctx.stroke();
  }
}
