/**
 * Drag throttle: at most one set_pose goes out per received state
 * broadcast, and the latest pending sample (the drop point) is never lost.
 */

export class DragThrottle {
  private allowance = 1;
  private pending: (() => void) | null = null;
  sent = 0;

  /** A new state broadcast arrived: grant one send, flush any pending. */
  onState(): void {
    this.allowance = 1;
    if (this.pending !== null) {
      const fn = this.pending;
      this.pending = null;
      this.allowance = 0;
      this.sent++;
      fn();
    }
  }

  /** Offer a drag sample; it goes out now or supersedes the pending one. */
  offer(fn: () => void): void {
    if (this.allowance > 0) {
      this.allowance = 0;
      this.sent++;
      fn();
    } else {
      this.pending = fn;
    }
  }

  hasPending(): boolean {
    return this.pending !== null;
  }
}
