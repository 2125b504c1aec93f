/**
 * State container for the editing playground.
 *
 * All user actions funnel through here so the interaction contracts
 * live in one place:
 *   - one edit dispatches at most one /mutate call, after client-side
 *     validation against the vocabulary (illegal input never reaches
 *     the wire);
 *   - a new edit aborts any still-in-flight one instead of queueing
 *     behind it;
 *   - walking the history timeline replays stored responses and never
 *     talks to the server;
 *   - API failures land in a dismissible banner and leave the rest of
 *     the state exactly as it was.
 */

import { ApiError, BatchInfo, JudgeResult, Meta, ProbeApiSurface } from "./api.js";
import { assertDistribution, isValidMessage, isValidSymbol } from "./model.js";

export interface HistoryEntry {
  symbols: string;
  probabilities: number[];
  drawn: string;
  delta: number[] | null;
}

export interface UiState {
  meta: Meta | null;
  dataset: string;
  seed: number;
  batch: BatchInfo | null;
  subject: number | null;
  length: number;
  history: HistoryEntry[];
  cursor: number;
  banner: string | null;
  busy: boolean;
}

export type Listener = (state: UiState) => void;

function isAbort(err: unknown): boolean {
  return err instanceof Error && err.name === "AbortError";
}

export class ProbeController {
  private state: UiState = {
    meta: null,
    dataset: "test",
    seed: 0,
    batch: null,
    subject: null,
    length: 0,
    history: [],
    cursor: -1,
    banner: null,
    busy: false,
  };
  private inflight: AbortController | null = null;

  constructor(
    private readonly api: ProbeApiSurface,
    private readonly listener: Listener = () => {},
  ) {}

  snapshot(): UiState {
    return {
      ...this.state,
      history: [...this.state.history],
      batch: this.state.batch,
    };
  }

  /** The entry shown on screen: cursor into history, or nothing yet. */
  current(): HistoryEntry | null {
    return this.state.history[this.state.cursor] ?? null;
  }

  private emit(patch: Partial<UiState>): void {
    this.state = { ...this.state, ...patch };
    this.listener(this.snapshot());
  }

  dismissBanner(): void {
    this.emit({ banner: null });
  }

  private fail(err: unknown): void {
    if (isAbort(err)) {
      return; // superseded request: newer state is already on its way
    }
    const text =
      err instanceof ApiError
        ? `${err.code}: ${err.message}`
        : err instanceof Error
          ? err.message
          : String(err);
    this.emit({ banner: text, busy: false });
  }

  private supersede(): AbortSignal {
    this.inflight?.abort();
    this.inflight = new AbortController();
    return this.inflight.signal;
  }

  async init(): Promise<void> {
    try {
      const meta = await this.api.meta();
      const dataset = meta.datasets.includes("test")
        ? "test"
        : (meta.datasets[0] ?? "test");
      this.emit({ meta, dataset, length: meta.min_length });
    } catch (err) {
      this.fail(err);
    }
  }

  /** One round trip: the created batch arrives with its thumbnails. */
  async loadBatch(dataset: string, seed: number): Promise<void> {
    const signal = this.supersede();
    this.emit({ busy: true, banner: null });
    try {
      const batch = await this.api.createBatch(dataset, seed, signal);
      this.emit({
        batch,
        dataset,
        seed,
        subject: null,
        history: [],
        cursor: -1,
        busy: false,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  /**
   * Speak about one candidate at the requested length, then judge the
   * fresh message: two round trips, after which every edit costs one.
   */
  async describe(subject: number, length: number): Promise<void> {
    const { meta, batch } = this.state;
    if (!meta || !batch) {
      this.emit({ banner: "load a batch first" });
      return;
    }
    const image = batch.thumbnails[subject];
    if (image === undefined) {
      this.emit({ banner: `no candidate ${subject} in this batch` });
      return;
    }
    if (length < meta.min_length || length > meta.max_length) {
      this.emit({
        banner: `length ${length} outside ${meta.min_length}..${meta.max_length}`,
      });
      return;
    }
    const signal = this.supersede();
    this.emit({ busy: true, banner: null, subject, length });
    try {
      const { symbols } = await this.api.speak(image, length, signal);
      const judged = await this.api.judge(symbols, batch.batch_id, signal);
      this.accept(symbols, judged, null);
    } catch (err) {
      this.fail(err);
    }
  }

  /**
   * Replace one symbol. Invalid input is rejected here, before the
   * network: the server never sees an illegal character or position.
   */
  async editSymbol(position: number, symbol: string): Promise<void> {
    const { meta, batch } = this.state;
    const current = this.current();
    if (!meta || !batch || !current) {
      this.emit({ banner: "nothing to edit yet" });
      return;
    }
    if (!isValidSymbol(symbol, meta.vocabulary)) {
      this.emit({
        banner: `"${symbol}" is not in the vocabulary ${meta.vocabulary}`,
      });
      return;
    }
    if (!Number.isInteger(position) || position < 0 || position >= current.symbols.length) {
      this.emit({ banner: `position ${position} outside the message` });
      return;
    }
    if (current.symbols[position] === symbol) {
      return; // nothing would change; skip the round trip entirely
    }
    const signal = this.supersede();
    this.emit({ busy: true, banner: null });
    try {
      const res = await this.api.mutate(
        current.symbols,
        position,
        symbol,
        batch.batch_id,
        signal,
      );
      const edited =
        current.symbols.slice(0, position) + symbol + current.symbols.slice(position + 1);
      this.accept(edited, res, res.delta);
    } catch (err) {
      this.fail(err);
    }
  }

  /** Jump the display to an earlier entry. Pure replay, no network. */
  selectHistory(index: number): void {
    if (index < 0 || index >= this.state.history.length) {
      return;
    }
    this.emit({ cursor: index });
  }

  private accept(symbols: string, judged: JudgeResult, delta: number[] | null): void {
    const { meta } = this.state;
    if (!meta) {
      return;
    }
    // render-time guard: a malformed distribution never reaches the bars
    try {
      assertDistribution(judged.probabilities, meta.batch_size);
    } catch (err) {
      this.fail(err);
      return;
    }
    if (!isValidMessage(symbols, meta.vocabulary)) {
      this.fail(new Error(`server returned symbols outside the vocabulary: ${symbols}`));
      return;
    }
    const entry: HistoryEntry = {
      symbols,
      probabilities: judged.probabilities,
      drawn: judged.drawn,
      delta,
    };
    const history = [...this.state.history, entry];
    this.emit({ history, cursor: history.length - 1, busy: false });
  }
}
