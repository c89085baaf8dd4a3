// three.js scene: live superquadric previews, the generated mesh, and the
// semi-transparent overlay mode for judging alignment.

import * as THREE from "three";
import type { ParsedMesh } from "./objparse";
import type { PrimitiveDoc, SceneDoc } from "./types";
import type { ViewToggles } from "./state";

const signedPow = (c: number, e: number): number => {
  const snapped = Math.abs(c) < 1e-12 ? 0 : c;
  return Math.sign(snapped) * Math.abs(snapped) ** e;
};

/** Parametric superquadric surface in its local frame, (segments+1)^2 grid. */
export function superquadricGeometry(p: PrimitiveDoc, segments = 24): THREE.BufferGeometry {
  const [sx, sy, sz] = p.scale;
  const [e1, e2] = p.exponents;
  const positions: number[] = [];
  const indices: number[] = [];
  for (let i = 0; i <= segments; i++) {
    const eta = -Math.PI / 2 + (Math.PI * i) / segments;
    const ce = signedPow(Math.cos(eta), e1);
    const se = signedPow(Math.sin(eta), e1);
    for (let j = 0; j <= segments; j++) {
      const omega = -Math.PI + (2 * Math.PI * j) / segments;
      positions.push(
        sx * ce * signedPow(Math.cos(omega), e2),
        sy * ce * signedPow(Math.sin(omega), e2),
        sz * se,
      );
    }
  }
  for (let i = 0; i < segments; i++) {
    for (let j = 0; j < segments; j++) {
      const a = i * (segments + 1) + j;
      const b = a + segments + 1;
      indices.push(a, b, a + 1, b, b + 1, a + 1);
    }
  }
  const geom = new THREE.BufferGeometry();
  geom.setAttribute("position", new THREE.Float32BufferAttribute(positions, 3));
  geom.setIndex(indices);
  geom.computeVertexNormals();
  return geom;
}

function applyPose(mesh: THREE.Object3D, p: PrimitiveDoc): void {
  mesh.position.set(p.translation[0], p.translation[1], p.translation[2]);
  // intrinsic Z-Y-X: rotation stores (rz, ry, rx)
  mesh.setRotationFromEuler(new THREE.Euler(p.rotation[2], p.rotation[1], p.rotation[0], "ZYX"));
}

export class Viewer {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer | null = null;
  private primGroup = new THREE.Group();
  private meshGroup = new THREE.Group();
  private selectedIndex: number | null = null;

  constructor(canvas?: HTMLCanvasElement) {
    this.camera = new THREE.PerspectiveCamera(42, 4 / 3, 0.01, 50);
    this.camera.position.set(1.7, -1.6, 1.3);
    this.camera.up.set(0, 0, 1);
    this.camera.lookAt(0.5, 0.5, 0.4);
    this.scene.background = new THREE.Color(0x10131a);
    const key = new THREE.DirectionalLight(0xffffff, 2.2);
    key.position.set(2, -3, 4);
    this.scene.add(key, new THREE.AmbientLight(0xffffff, 0.55));
    this.scene.add(new THREE.GridHelper(1, 8).translateX(0.5).translateZ(0.5).rotateX(Math.PI / 2));
    this.scene.add(this.primGroup, this.meshGroup);
    if (canvas) {
      this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
      this.renderer.setSize(canvas.clientWidth, canvas.clientHeight, false);
      this.camera.aspect = canvas.clientWidth / canvas.clientHeight;
      this.camera.updateProjectionMatrix();
    }
  }

  setSelection(index: number | null): void {
    this.selectedIndex = index;
  }

  showScene(doc: SceneDoc, toggles: ViewToggles): void {
    this.primGroup.clear();
    if (!toggles.primitives && !toggles.overlay) return;
    const overlayMode = toggles.overlay && this.meshGroup.children.length > 0;
    doc.primitives.forEach((p, i) => {
      const selected = i === this.selectedIndex;
      const material = new THREE.MeshStandardMaterial({
        color: selected ? 0xffc045 : 0x7fb8ff,
        transparent: overlayMode,
        opacity: overlayMode ? 0.35 : 1.0,
        roughness: 0.65,
      });
      const mesh = new THREE.Mesh(superquadricGeometry(p), material);
      applyPose(mesh, p);
      this.primGroup.add(mesh);
    });
  }

  showGenerated(mesh: ParsedMesh | null, toggles: ViewToggles): void {
    this.meshGroup.clear();
    if (!mesh || !toggles.mesh) return;
    const geom = new THREE.BufferGeometry();
    geom.setAttribute("position", new THREE.BufferAttribute(mesh.positions, 3));
    if (mesh.colors) geom.setAttribute("color", new THREE.BufferAttribute(mesh.colors, 3));
    geom.setIndex(new THREE.BufferAttribute(mesh.indices, 1));
    geom.computeVertexNormals();
    const material = new THREE.MeshStandardMaterial({
      vertexColors: mesh.colors !== null,
      color: mesh.colors ? 0xffffff : 0xdadfe8,
      roughness: 0.8,
    });
    this.meshGroup.add(new THREE.Mesh(geom, material));
  }

  render(): void {
    this.renderer?.render(this.scene, this.camera);
  }
}
