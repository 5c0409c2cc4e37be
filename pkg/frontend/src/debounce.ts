/** Trailing-edge debouncer: rapid calls collapse into one invocation made
 *  `delayMs` after the last call. Used to keep slider scrubbing down to a
 *  single solver job per pause. */
export class Debouncer<T> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: T | undefined;

  constructor(
    private readonly delayMs: number,
    private readonly fire: (value: T) => void,
  ) {}

  call(value: T): void {
    this.pending = value;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      const value = this.pending as T;
      this.pending = undefined;
      this.fire(value);
    }, this.delayMs);
  }

  hasPending(): boolean {
    return this.timer !== null;
  }

  /** Cancel without firing; returns true if something was pending. */
  cancel(): boolean {
    const had = this.timer !== null;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
    this.pending = undefined;
    return had;
  }

  flush(): void {
    if (this.timer === null) return;
    clearTimeout(this.timer);
    this.timer = null;
    const value = this.pending as T;
    this.pending = undefined;
    this.fire(value);
  }
}
