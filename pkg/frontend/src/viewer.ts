// Viewer controller: owns the state, drives the fetcher, and hands decoded
// images to the display layer.  DOM-free so the whole behavior is testable.

import { absDifference, parseF32, SliceImage } from "./image.js";
import { createFetcher, FetchFn, SliceFetcher } from "./fetcher.js";
import {
    clampPose, initialState, Mode, Pose, ServerInfo, sliceQuery, ViewerState,
    IDENTITY_POSE,
} from "./state.js";

export interface DisplayFrame {
    mode: Mode;
    pose: Pose;       // the pose the request actually used (post-clamp)
    panes: SliceImage[]; // 1 pane, or [recon, gt, diff] in comparison modes
    requestId: number;
}

export interface ViewerCallbacks {
    onFrame(frame: DisplayFrame): void;
    onError(message: string): void;
    onClamp(clamped: boolean): void;
}

export class ViewerController {
    state: ViewerState;
    private fetcher: SliceFetcher;
    private cb: ViewerCallbacks;

    constructor(baseUrl: string, cb: ViewerCallbacks, fetchFn?: FetchFn,
                fetcher?: SliceFetcher) {
        this.state = initialState(baseUrl);
        this.cb = cb;
        const doFetch: FetchFn = fetchFn ?? (async (url) => {
            const r = await fetch(url);
            if (!r.ok) throw new Error(`HTTP ${r.status} for ${url}`);
            return r.arrayBuffer();
        });
        this.fetcher = fetcher ?? createFetcher(doFetch);
    }

    async loadInfo(fetchJson?: (url: string) => Promise<ServerInfo>): Promise<void> {
        const get = fetchJson ?? (async (url: string) => {
            const r = await fetch(url);
            if (!r.ok) throw new Error(`HTTP ${r.status}`);
            return (await r.json()) as ServerInfo;
        });
        const info = await get(this.state.baseUrl + "/info");
        this.state.bounds = info.world_bounds_mm;
        this.state.dims = { ...info.default_spec };
    }

    setPoseField(name: keyof Pose, value: number): void {
        this.state.pose = { ...this.state.pose, [name]: value };
        this.refresh();
    }

    setMode(mode: Mode): void {
        this.state.mode = mode; // pose is preserved across mode changes
        this.refresh();
    }

    reset(): void {
        this.state.pose = { ...IDENTITY_POSE };
        this.refresh();
    }

    /** Issue a (debounced, latest-wins) fetch for the current state. */
    refresh(): void {
        const { pose, clamped } = clampPose(this.state.pose, this.state.bounds);
        this.state.pose = pose;
        this.cb.onClamp(clamped);
        const q = sliceQuery(pose, this.state.dims, "f32");
        const recon = `${this.state.baseUrl}/slice?${q}`;
        const gt = `${this.state.baseUrl}/gt_slice?${q}`;
        const urls = this.state.mode === "reconstruction" ? [recon]
            : this.state.mode === "ground-truth" ? [gt]
            : [recon, gt];
        const mode = this.state.mode;
        const { width, height } = this.state.dims;
        this.fetcher.request({ urls }, (bodies) => {
            const imgs = bodies.map((b) => parseF32(b, width, height));
            const panes = imgs.length === 2
                ? [imgs[0], imgs[1], absDifference(imgs[0], imgs[1])]
                : imgs;
            this.cb.onFrame({ mode, pose, panes, requestId: this.lastRequestId() });
        }, (err) => this.cb.onError(err.message));
    }

    lastRequestId(): number {
        return this.fetcher.lastId();
    }
}
