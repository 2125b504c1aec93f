/** DOM rendering: translates UiState snapshots into the page. */

import { decodePgmBase64, toRgba } from "./pgm.js";
import { argmaxWithTies } from "./model.js";
import { HistoryEntry, ProbeController, UiState } from "./controller.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function paintPgm(canvas: HTMLCanvasElement, b64: string): void {
  const img = decodePgmBase64(b64);
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.putImageData(new ImageData(toRgba(img), img.width, img.height), 0, 0);
}

export class Page {
  private banner = el("div", "banner hidden");
  private controls = el("div", "controls");
  private candidates = el("div", "candidates");
  private editor = el("div", "editor");
  private drawnBox = el("div", "drawn-box");
  private timeline = el("ol", "timeline");
  private seedInput = el("input") as HTMLInputElement;
  private datasetSelect = el("select") as HTMLSelectElement;
  private lengthSelect = el("select") as HTMLSelectElement;

  constructor(
    root: HTMLElement,
    private readonly controller: ProbeController,
  ) {
    const title = el("h1", undefined, "message probe");
    const sub = el(
      "p",
      "subtitle",
      "sample a candidate batch, describe one image, then steer the listener one symbol at a time",
    );
    this.banner.addEventListener("click", () => controller.dismissBanner());

    this.seedInput.type = "number";
    this.seedInput.value = "0";
    const load = el("button", undefined, "load batch");
    load.addEventListener("click", () => {
      void this.controller.loadBatch(
        this.datasetSelect.value,
        Number(this.seedInput.value) || 0,
      );
    });
    this.controls.append(
      el("label", undefined, "dataset"),
      this.datasetSelect,
      el("label", undefined, "seed"),
      this.seedInput,
      load,
    );

    root.append(
      title,
      sub,
      this.banner,
      this.controls,
      this.candidates,
      this.editor,
      this.drawnBox,
      el("h2", undefined, "history"),
      this.timeline,
    );
  }

  render(state: UiState): void {
    this.renderBanner(state);
    this.renderControls(state);
    const entry = state.history[state.cursor] ?? null;
    this.renderCandidates(state, entry);
    this.renderEditor(state, entry);
    this.renderDrawn(entry);
    this.renderTimeline(state);
    document.body.classList.toggle("busy", state.busy);
  }

  private renderBanner(state: UiState): void {
    this.banner.classList.toggle("hidden", state.banner === null);
    this.banner.textContent = state.banner ? `${state.banner} (click to dismiss)` : "";
  }

  private renderControls(state: UiState): void {
    const meta = state.meta;
    if (!meta) return;
    if (this.datasetSelect.options.length !== meta.datasets.length) {
      this.datasetSelect.replaceChildren(
        ...meta.datasets.map((d) => new Option(d, d, false, d === state.dataset)),
      );
    }
    const lengths: number[] = [];
    for (let r = meta.min_length; r <= meta.max_length; r++) lengths.push(r);
    if (this.lengthSelect.options.length !== lengths.length) {
      this.lengthSelect.replaceChildren(
        ...lengths.map((r) => new Option(String(r), String(r), false, r === state.length)),
      );
    }
  }

  private renderCandidates(state: UiState, entry: HistoryEntry | null): void {
    this.candidates.replaceChildren();
    if (!state.batch) {
      this.candidates.append(el("p", "placeholder", "no batch loaded"));
      return;
    }
    const highlight = entry ? argmaxWithTies(entry.probabilities) : null;
    state.batch.thumbnails.forEach((thumb, i) => {
      const card = el("figure", "candidate");
      const canvas = el("canvas");
      paintPgm(canvas, thumb);
      const caption = el("figcaption");
      if (entry) {
        const p = entry.probabilities[i] ?? 0;
        const bar = el("div", "bar");
        const fill = el("div", "fill");
        fill.style.width = `${(p * 100).toFixed(1)}%`;
        bar.append(fill);
        const label = el("span", "pct", `${(p * 100).toFixed(1)}%`);
        if (entry.delta && entry.delta[i] !== undefined) {
          const d = entry.delta[i]!;
          const sign = d >= 0 ? "+" : "";
          label.append(el("small", d >= 0 ? "up" : "down", ` ${sign}${(d * 100).toFixed(1)}`));
        }
        caption.append(bar, label);
      } else {
        caption.append(el("span", "pct", `#${i}`));
      }
      if (highlight && highlight.index === i) {
        card.classList.add("argmax");
        if (highlight.tie) {
          card.append(el("span", "tie-mark", "tie"));
        }
      }
      if (state.subject === i) card.classList.add("subject");
      card.append(canvas, caption);
      card.addEventListener("click", () => {
        void this.controller.describe(i, this.currentLength(state));
      });
      this.candidates.append(card);
    });
    const hint = el(
      "p",
      "hint",
      "click a candidate to make the speaker describe it at the selected length",
    );
    this.candidates.append(hint);
  }

  private currentLength(state: UiState): number {
    const v = Number(this.lengthSelect.value);
    if (state.meta && v >= state.meta.min_length && v <= state.meta.max_length) return v;
    return state.meta ? state.meta.min_length : v;
  }

  private renderEditor(state: UiState, entry: HistoryEntry | null): void {
    this.editor.replaceChildren();
    const row = el("div", "controls");
    row.append(el("label", undefined, "length"), this.lengthSelect);
    this.editor.append(row);
    if (!entry || !state.meta) {
      this.editor.append(el("p", "placeholder", "no message yet"));
      return;
    }
    const strip = el("div", "symbols");
    [...entry.symbols].forEach((ch, pos) => {
      const cell = el("input", "symbol") as HTMLInputElement;
      cell.value = ch;
      cell.maxLength = 1;
      cell.addEventListener("focus", () => cell.select());
      cell.addEventListener("input", () => {
        const next = cell.value.toUpperCase();
        cell.value = ch; // optimistic text is never shown; state drives renders
        if (next) {
          void this.controller.editSymbol(pos, next);
        }
      });
      strip.append(cell);
    });
    this.editor.append(strip);
    this.editor.append(
      el("p", "hint", "type over a symbol to re-judge the edited message"),
    );
  }

  private renderDrawn(entry: HistoryEntry | null): void {
    this.drawnBox.replaceChildren(el("h2", undefined, "listener's drawing"));
    if (!entry) {
      this.drawnBox.append(el("p", "placeholder", "nothing drawn yet"));
      return;
    }
    const canvas = el("canvas", "drawn");
    paintPgm(canvas, entry.drawn);
    this.drawnBox.append(canvas);
  }

  private renderTimeline(state: UiState): void {
    this.timeline.replaceChildren();
    state.history.forEach((entry, i) => {
      const item = el("li", i === state.cursor ? "current" : undefined);
      const { index } = argmaxWithTies(entry.probabilities);
      const top = entry.probabilities[index] ?? 0;
      item.append(
        el("code", undefined, entry.symbols),
        el("span", "who", ` guess #${index} at ${(top * 100).toFixed(1)}%`),
      );
      item.addEventListener("click", () => this.controller.selectHistory(i));
      this.timeline.append(item);
    });
    if (state.history.length === 0) {
      this.timeline.append(el("li", "placeholder", "no judgments yet"));
    }
  }
}
