// Debounced, latest-wins slice fetching.
//
// Every user interaction schedules a fetch; requests are debounced (60 ms)
// and tagged with a monotonically increasing id.  A response is delivered
// only if no newer request has been issued since, so the display can never
// go backwards no matter how responses interleave.

export const DEBOUNCE_MS = 60;

export type FetchFn = (url: string) => Promise<ArrayBuffer>;

export interface SliceRequest {
    urls: string[]; // one or two endpoints (comparison modes fetch both)
}

export interface SliceFetcher {
    /** Schedule a (debounced) fetch; the callback fires only for the latest. */
    request(req: SliceRequest, onData: (bodies: ArrayBuffer[]) => void,
            onError?: (err: Error) => void): void;
    /** Drop any pending/in-flight request. */
    cancel(): void;
    /** Id of the most recently issued request (for tests/diagnostics). */
    lastId(): number;
}

interface Timer {
    set(fn: () => void, ms: number): unknown;
    clear(handle: unknown): void;
}

const realTimer: Timer = {
    set: (fn, ms) => setTimeout(fn, ms),
    clear: (h) => clearTimeout(h as ReturnType<typeof setTimeout>),
};

export function createFetcher(fetchFn: FetchFn, timer: Timer = realTimer,
                              debounceMs: number = DEBOUNCE_MS): SliceFetcher {
    let id = 0;
    let pendingHandle: unknown = null;

    return {
        request(req, onData, onError) {
            id++;
            const thisId = id;
            if (pendingHandle !== null) timer.clear(pendingHandle);
            pendingHandle = timer.set(async () => {
                pendingHandle = null;
                if (thisId !== id) return; // superseded while waiting
                try {
                    const bodies = await Promise.all(req.urls.map(fetchFn));
                    if (thisId === id) onData(bodies);
                } catch (err) {
                    if (thisId === id && onError) {
                        onError(err instanceof Error ? err : new Error(String(err)));
                    }
                }
            }, debounceMs);
        },
        cancel() {
            id++;
            if (pendingHandle !== null) {
                timer.clear(pendingHandle);
                pendingHandle = null;
            }
        },
        lastId: () => id,
    };
}
