/** Interval polling with request sequence numbers.
 *
 * Responses can come back out of order when a slow request overlaps a
 * fast one; each request is numbered and a response older than the last
 * one applied is dropped instead of overwriting newer data.
 */

export class Poller<T> {
  private seq = 0;
  private applied = 0;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly fetchOnce: () => Promise<T>,
    private readonly onData: (data: T) => void,
    private readonly onError: (err: unknown) => void,
    private readonly intervalMs: number,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  get running(): boolean {
    return this.timer !== null;
  }

  async tick(): Promise<void> {
    const seq = ++this.seq;
    try {
      const data = await this.fetchOnce();
      if (seq <= this.applied) return; // a newer response already landed
      this.applied = seq;
      this.onData(data);
    } catch (err) {
      if (seq <= this.applied) return;
      this.applied = seq;
      this.onError(err);
    }
  }
}
