/** Ranked suggestion strip state.
 *
 * The strip renders responses in exactly the order the service
 * returned them; it never re-sorts. Overlapping requests are guarded
 * by a monotonically increasing sequence token so a slow stale
 * response can never overwrite a newer one, and a failed request
 * clears the strip rather than leaving stale suggestions up.
 */

import type { SuggestionItem, SuggestionResponse } from "./api.js";
import { describeError } from "./api.js";

/** Monotone token dispenser; only the most recently issued token is
 * current. Shared by the strip and the energy readout fetches. */
export class SequenceGate {
  private seq = 0;

  next(): number {
    return ++this.seq;
  }

  current(token: number): boolean {
    return token === this.seq;
  }

  /** Retire every outstanding token (undo, scene switch). */
  invalidate(): void {
    this.seq++;
  }
}

export type FeedStatus = "idle" | "loading" | "ready" | "empty" | "error";

export class SuggestionFeed {
  private gate = new SequenceGate();
  private listeners: Array<() => void> = [];
  status: FeedStatus = "idle";
  items: SuggestionItem[] = [];
  message = "";

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** Run one suggestion fetch under the sequence guard. */
  async load(fetcher: () => Promise<SuggestionResponse>): Promise<void> {
    const token = this.gate.next();
    this.status = "loading";
    this.notify();
    try {
      const response = await fetcher();
      if (!this.gate.current(token)) return;
      this.items = response.items;
      if (this.items.length > 0) {
        this.status = "ready";
        this.message = "";
      } else {
        this.status = "empty";
        this.message = "no candidates in this class";
      }
    } catch (err) {
      if (!this.gate.current(token)) return;
      this.items = [];
      this.status = "error";
      this.message = describeError(err);
    }
    this.notify();
  }

  clear(): void {
    this.gate.invalidate();
    this.items = [];
    this.status = "idle";
    this.message = "";
    this.notify();
  }

  /** Displayed order, which must equal the service response order. */
  order(): string[] {
    return this.items.map((item) => item.furniture_id);
  }
}
