/** DOM wiring: file input, cubeness slider, coarse-budget selector, display
 *  toggles, status line, and the live convergence chart. */
import { SteeringController } from "./controller.js";
import { parseObjGeometry } from "./objText.js";
import { Viewer } from "./renderer.js";
import { ConvergenceChart } from "./chart.js";

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

const fileInput = $<HTMLInputElement>("file");
const slider = $<HTMLInputElement>("lambda-slider");
const lambdaText = $<HTMLInputElement>("lambda-text");
const mSelect = $<HTMLSelectElement>("coarse-select");
const statusLine = $<HTMLSpanElement>("status");
const errorPanel = $<HTMLDivElement>("errors");
const canvas = $<HTMLCanvasElement>("viewport");
const chartCanvas = $<HTMLCanvasElement>("chart");

const viewer = new Viewer(canvas);
const chart = new ConvergenceChart(chartCanvas);

// slider position in [0, 1] -> lambda: 0 at the left edge, then log scale
// from 0.01 to 1; larger values by text entry
const sliderToLambda = (t: number) => (t <= 0 ? 0 : 10 ** (-2 + 2 * t));
const lambdaToSlider = (lam: number) => (lam <= 0 ? 0 : (Math.log10(lam) + 2) / 2);

const controller = new SteeringController(
  "", undefined, 150,
  {
    onStatus: (status) => {
      statusLine.textContent =
        `${status}  |  iter ${controller.state.trace.length ? controller.state.trace[controller.state.trace.length - 1].iter : 0}` +
        (controller.state.warm !== null ? `  |  ${controller.state.warm ? "warm" : "cold"} start` : "");
    },
    onTrace: () => {
      chart.draw(controller.state.trace);
      const last = controller.state.trace[controller.state.trace.length - 1];
      statusLine.textContent =
        `${controller.state.status}  |  iter ${last.iter}  |  rel ${last.rel_displacement.toExponential(1)}` +
        `  |  cubeness ${last.cubeness.toFixed(3)}`;
    },
    onPositions: (positions) => viewer.updateStylized(positions),
    onError: (error) => {
      errorPanel.textContent = String(error);
      errorPanel.style.display = "block";
    },
  },
);

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  errorPanel.style.display = "none";
  const text = await file.text();
  try {
    const info = await controller.upload(text);
    const geom = parseObjGeometry(text);
    viewer.setMesh(geom.positions, geom.triangles);
    $<HTMLSpanElement>("mesh-stats").textContent =
      `|V| ${info.nv.toLocaleString()}  |F| ${info.nf.toLocaleString()}  cubeness ${info.cubeness.toFixed(3)}`;
    slider.disabled = false;
    lambdaText.disabled = false;
    mSelect.disabled = false;
    for (const option of Array.from(mSelect.options)) {
      const m = Number(option.value);
      option.disabled = option.value !== "full" && m >= info.nf;
    }
  } catch (error) {
    const payload = (error as { payload?: { validation?: { nonmanifold_edges?: number[][] } } }).payload;
    let detail = String(error);
    const edges = payload?.validation?.nonmanifold_edges;
    if (edges?.length) {
      detail += `\nnon-manifold edges: ${edges.slice(0, 20).map((e) => e.join("-")).join(", ")}`;
    }
    errorPanel.textContent = detail;
    errorPanel.style.display = "block";
  }
});

slider.addEventListener("input", () => {
  const lam = sliderToLambda(Number(slider.value));
  lambdaText.value = lam.toFixed(3);
  controller.setLambda(lam);
});

lambdaText.addEventListener("change", () => {
  const lam = Math.max(0, Number(lambdaText.value) || 0);
  slider.value = String(Math.min(lambdaToSlider(lam), 1));
  controller.setLambda(lam);
});

mSelect.addEventListener("change", () => {
  const value = mSelect.value;
  controller.setCoarseFaces(value === "full" ? null : Number(value));
});

for (const mode of ["original", "stylized", "split"] as const) {
  $<HTMLButtonElement>(`mode-${mode}`).addEventListener("click", () => {
    controller.setDisplayMode(mode);
    viewer.setMode(mode);
    for (const other of ["original", "stylized", "split"]) {
      $(`mode-${other}`).classList.toggle("active", other === mode);
    }
  });
}

window.addEventListener("resize", () => viewer.draw());
