// Viewer state: probe pose, slice geometry, display mode.

export type Mode = "reconstruction" | "ground-truth" | "side-by-side" | "difference";

export interface Pose {
    rx: number; // degrees, ZYX intrinsic
    ry: number;
    rz: number;
    tx: number; // mm
    ty: number;
    tz: number;
}

export interface SliceDims {
    width: number;
    height: number;
    spacing: number; // mm per pixel
}

export interface ServerInfo {
    n_gaussians: number;
    world_bounds_mm: [number[], number[]];
    default_spec: { width: number; height: number; spacing: number };
}

export interface ViewerState {
    pose: Pose;
    dims: SliceDims;
    mode: Mode;
    baseUrl: string;
    bounds: [number[], number[]] | null;
}

export const IDENTITY_POSE: Pose = { rx: 0, ry: 0, rz: 0, tx: 0, ty: 0, tz: 0 };

export function initialState(baseUrl: string): ViewerState {
    return {
        pose: { ...IDENTITY_POSE },
        dims: { width: 160, height: 160, spacing: 0.6 },
        mode: "reconstruction",
        baseUrl,
        bounds: null,
    };
}

/** Clamp translations to the server-reported world bounds.
 *  Returns the clamped pose and whether any component was clamped. */
export function clampPose(pose: Pose, bounds: [number[], number[]] | null):
        { pose: Pose; clamped: boolean } {
    if (!bounds) return { pose, clamped: false };
    const [lo, hi] = bounds;
    const t = [pose.tx, pose.ty, pose.tz];
    let clamped = false;
    for (let i = 0; i < 3; i++) {
        const v = Math.min(Math.max(t[i], lo[i]), hi[i]);
        if (v !== t[i]) clamped = true;
        t[i] = v;
    }
    return { pose: { ...pose, tx: t[0], ty: t[1], tz: t[2] }, clamped };
}

/** Build the /slice (or /gt_slice) query string for a pose. */
export function sliceQuery(pose: Pose, dims: SliceDims, fmt: "pgm" | "f32"): string {
    const p = new URLSearchParams();
    p.set("rx", String(pose.rx));
    p.set("ry", String(pose.ry));
    p.set("rz", String(pose.rz));
    p.set("tx", String(pose.tx));
    p.set("ty", String(pose.ty));
    p.set("tz", String(pose.tz));
    p.set("w", String(dims.width));
    p.set("h", String(dims.height));
    p.set("spacing", String(dims.spacing));
    p.set("fmt", fmt);
    return p.toString();
}

/** Parse a numeric field; returns null for anything that is not a finite number. */
export function parseNumeric(text: string): number | null {
    if (text.trim() === "") return null;
    const v = Number(text);
    return Number.isFinite(v) ? v : null;
}
