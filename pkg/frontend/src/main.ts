// Page wiring: sliders, numeric entry, mode selector, canvases, banner.

import { toRgba } from "./image.js";
import { Mode, parseNumeric, Pose } from "./state.js";
import { DisplayFrame, ViewerController } from "./viewer.js";

const POSE_FIELDS: { name: keyof Pose; label: string; min: number; max: number; step: number }[] = [
    { name: "rx", label: "rx (deg)", min: -180, max: 180, step: 0.5 },
    { name: "ry", label: "ry (deg)", min: -180, max: 180, step: 0.5 },
    { name: "rz", label: "rz (deg)", min: -180, max: 180, step: 0.5 },
    { name: "tx", label: "tx (mm)", min: -100, max: 100, step: 0.5 },
    { name: "ty", label: "ty (mm)", min: -100, max: 100, step: 0.5 },
    { name: "tz", label: "tz (mm)", min: -100, max: 100, step: 0.5 },
];

function drawPane(canvas: HTMLCanvasElement, frame: DisplayFrame, idx: number): void {
    const img = frame.panes[idx];
    if (!img) {
        canvas.style.display = "none";
        return;
    }
    canvas.style.display = "";
    canvas.width = img.width;
    canvas.height = img.height;
    const ctx = canvas.getContext("2d")!;
    ctx.putImageData(new ImageData(toRgba(img), img.width, img.height), 0, 0);
}

export function mount(root: HTMLElement, baseUrl: string): ViewerController {
    const banner = document.createElement("div");
    banner.className = "banner";
    banner.style.display = "none";

    const clampNote = document.createElement("span");
    clampNote.className = "clamp-indicator";
    clampNote.textContent = "clamped to bounds";
    clampNote.style.display = "none";

    const canvases = [0, 1, 2].map(() => document.createElement("canvas"));
    const paneRow = document.createElement("div");
    paneRow.className = "panes";
    canvases.forEach((c) => paneRow.appendChild(c));

    const controller = new ViewerController(baseUrl, {
        onFrame(frame) {
            banner.style.display = "none";
            canvases.forEach((c, i) => drawPane(c, frame, i));
            // keep the numeric display in sync with the pose actually used
            for (const f of POSE_FIELDS) {
                const box = root.querySelector<HTMLInputElement>(`input[data-entry="${f.name}"]`);
                if (box && document.activeElement !== box) {
                    box.value = String(frame.pose[f.name]);
                }
            }
        },
        onError(message) {
            banner.textContent = `server error: ${message} (showing last image)`;
            banner.style.display = "";
        },
        onClamp(clamped) {
            clampNote.style.display = clamped ? "" : "none";
        },
    });

    const controls = document.createElement("div");
    controls.className = "controls";
    for (const f of POSE_FIELDS) {
        const row = document.createElement("label");
        row.textContent = f.label;

        const slider = document.createElement("input");
        slider.type = "range";
        slider.min = String(f.min);
        slider.max = String(f.max);
        slider.step = String(f.step);
        slider.value = "0";
        slider.dataset.pose = f.name;
        slider.addEventListener("input", () => {
            controller.setPoseField(f.name, Number(slider.value));
        });

        const entry = document.createElement("input");
        entry.type = "text";
        entry.value = "0";
        entry.dataset.entry = f.name;
        entry.addEventListener("change", () => {
            const v = parseNumeric(entry.value);
            if (v === null) {
                entry.classList.add("invalid");
                return;
            }
            entry.classList.remove("invalid");
            slider.value = String(v);
            controller.setPoseField(f.name, v);
        });

        row.appendChild(slider);
        row.appendChild(entry);
        controls.appendChild(row);
    }

    const modeSel = document.createElement("select");
    for (const m of ["reconstruction", "ground-truth", "side-by-side", "difference"]) {
        const opt = document.createElement("option");
        opt.value = m;
        opt.textContent = m;
        modeSel.appendChild(opt);
    }
    modeSel.addEventListener("change", () => controller.setMode(modeSel.value as Mode));

    const resetBtn = document.createElement("button");
    resetBtn.textContent = "reset pose";
    resetBtn.addEventListener("click", () => {
        root.querySelectorAll<HTMLInputElement>("input[data-pose]")
            .forEach((s) => { s.value = "0"; });
        controller.reset();
    });

    controls.appendChild(modeSel);
    controls.appendChild(resetBtn);
    controls.appendChild(clampNote);
    root.appendChild(banner);
    root.appendChild(controls);
    root.appendChild(paneRow);

    controller.loadInfo().then(() => controller.refresh()).catch((e) => {
        banner.textContent = `cannot reach server: ${e.message}`;
        banner.style.display = "";
    });
    return controller;
}

declare global {
    interface Window { echosplatViewer?: ViewerController }
}

if (typeof document !== "undefined" && document.getElementById("viewer-root")) {
    const base = (document.getElementById("base-url") as HTMLInputElement | null)?.value
        ?? "http://127.0.0.1:8472";
    window.echosplatViewer = mount(document.getElementById("viewer-root")!, base);
}
