// DOM glue: wires the bridge client, the store and the three views.

import { BridgeClient } from "./client.js";
import { GraphView } from "./graphview.js";
import { MapView } from "./mapview.js";
import { PlotView } from "./plotview.js";
import { DashboardStore } from "./store.js";
import { TeleopKeys, EMIT_INTERVAL_MS } from "./teleop.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const store = new DashboardStore();
const wsUrl = window.location.origin.replace(/^http/, "ws") + "/ws";
const client = new BridgeClient(wsUrl);

const banner = byId<HTMLDivElement>("banner");
const toast = byId<HTMLDivElement>("toast");
const graphCanvas = byId<HTMLCanvasElement>("graph");
const plotCanvas = byId<HTMLCanvasElement>("plot");
const mapCanvas = byId<HTMLCanvasElement>("map");
const plotSelect = byId<HTMLSelectElement>("plot-select");
const pauseBtn = byId<HTMLButtonElement>("plot-pause");
const csvBtn = byId<HTMLButtonElement>("plot-csv");
const resetBtn = byId<HTMLButtonElement>("reset");
const subscribeInput = byId<HTMLInputElement>("subscribe-input");
const subscribeBtn = byId<HTMLButtonElement>("subscribe-btn");

const graphView = new GraphView(graphCanvas, store);
const plotView = new PlotView(plotCanvas, store);
const mapView = new MapView(mapCanvas, store);

let toastTimer: number | undefined;
function showToast(text: string, bad: boolean): void {
  toast.textContent = text;
  toast.className = bad ? "toast bad" : "toast good";
  toast.style.display = "block";
  window.clearTimeout(toastTimer);
  toastTimer = window.setTimeout(() => (toast.style.display = "none"), 4000);
}

client.onStatus((status) => {
  if (status === "open") {
    banner.style.display = "none";
    store.clear(); // fresh snapshot arrives right after connect
  } else {
    banner.textContent =
      status === "connecting" ? "connecting to bridge..." : "bridge disconnected, retrying...";
    banner.style.display = "block";
  }
});

client.onFrame((frame) => {
  store.apply(frame);
  if (frame.type === "error") {
    showToast(`${frame.cmd ?? "bridge"}: ${frame.reason}`, true);
  } else if (frame.type === "ack" && frame.cmd === "set_goal") {
    showToast(`goal accepted (${frame["waypoints"]} waypoints)`, false);
  } else if (frame.type === "ack" && frame.cmd === "reset") {
    showToast(`episode ${frame["episode"]} started`, false);
  }
});

// plot field choices follow the sampled channels
function refreshPlotChoices(): void {
  const current = plotSelect.value;
  const keys = [...store.plots.keys()].sort();
  if (keys.join("|") === [...plotSelect.options].map((o) => o.value).join("|")) return;
  plotSelect.innerHTML = "";
  for (const key of keys) {
    const opt = document.createElement("option");
    opt.value = key;
    opt.textContent = key;
    plotSelect.appendChild(opt);
  }
  if (keys.includes(current)) plotSelect.value = current;
  else plotView.select(keys[0] ?? null);
}

plotSelect.addEventListener("change", () => plotView.select(plotSelect.value || null));
pauseBtn.addEventListener("click", () => {
  pauseBtn.textContent = plotView.togglePause() ? "resume" : "pause";
});
csvBtn.addEventListener("click", () => {
  const csv = plotView.downloadCsv();
  if (!csv) return;
  const blob = new Blob([csv], { type: "text/csv" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = (plotView.key ?? "plot").replace(/[ /.]/g, "_") + ".csv";
  a.click();
  URL.revokeObjectURL(a.href);
});

subscribeBtn.addEventListener("click", () => {
  const channel = subscribeInput.value.trim();
  if (channel) client.send({ type: "subscribe", channel });
});

resetBtn.addEventListener("click", () => client.send({ type: "reset" }));

// teleop: keys work while the map canvas has focus
const teleop = new TeleopKeys((cmd) => client.send({ type: "teleop", ...cmd }));
mapCanvas.tabIndex = 0;
mapCanvas.addEventListener("keydown", (ev) => {
  if (teleop.keyDown(ev.key)) ev.preventDefault();
});
mapCanvas.addEventListener("keyup", (ev) => {
  if (teleop.keyUp(ev.key)) ev.preventDefault();
});
window.setInterval(() => teleop.tick(), EMIT_INTERVAL_MS);

mapCanvas.addEventListener("click", (ev) => {
  mapCanvas.focus();
  const rect = mapCanvas.getBoundingClientRect();
  const world = mapView.clickToWorld(ev.clientX - rect.left, ev.clientY - rect.top);
  if (!world) return;
  mapView.goalMarker = world;
  client.send({ type: "set_goal", x: world[0], y: world[1] });
});

function frame(): void {
  refreshPlotChoices();
  graphView.render();
  plotView.render();
  mapView.render();
  requestAnimationFrame(frame);
}

client.connect();
requestAnimationFrame(frame);
