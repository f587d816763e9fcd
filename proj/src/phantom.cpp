#include "isd/phantom.hpp"

#include <cmath>
#include <cstdio>

#include "isd/isdt_io.hpp"
#include "isd/manifest.hpp"
#include "isd/rng.hpp"

namespace isd::phantom {

namespace {

struct Ellipse {
    double cy, cx, cz;  // cz unused in 2-d
    double ry, rx, rz;

    bool contains(double y, double x, double z, bool is3d) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        double q = dy * dy + dx * dx;
        if (is3d) {
            const double dz = (z - cz) / rz;
            q += dz * dz;
        }
        return q <= 1.0;
    }
};

struct Scene {
    Ellipse body;
    std::vector<Ellipse> lungs;
    std::vector<std::pair<Ellipse, float>> lesions;  // geometry + HU
    float body_hu, lung_hu;
};

Scene sample_scene(const PhantomSpec& spec, rng::Xoshiro256& g) {
    const double s = double(spec.size);
    Scene sc;
    sc.body.cy = s * g.uniform(0.46, 0.54);
    sc.body.cx = s * g.uniform(0.46, 0.54);
    sc.body.cz = s * 0.5;
    sc.body.ry = s * g.uniform(0.36, 0.44);
    sc.body.rx = s * g.uniform(0.38, 0.46);
    sc.body.rz = s * g.uniform(0.36, 0.44);
    sc.body_hu = float(g.uniform(0.0, 60.0));
    sc.lung_hu = float(g.uniform(-850.0, -600.0));

    const std::size_t n_lungs = 1 + g.next_below(2);
    for (std::size_t i = 0; i < n_lungs; ++i) {
        Ellipse l;
        const double side = (n_lungs == 2) ? (i == 0 ? -1.0 : 1.0) : g.uniform(-1.0, 1.0);
        l.cx = sc.body.cx + side * s * 0.18;
        l.cy = sc.body.cy + s * g.uniform(-0.06, 0.06);
        l.cz = sc.body.cz + s * g.uniform(-0.06, 0.06);
        l.ry = s * g.uniform(spec.lung_semiaxis_min, spec.lung_semiaxis_max);
        l.rx = s * g.uniform(spec.lung_semiaxis_min, spec.lung_semiaxis_max);
        l.rz = s * g.uniform(spec.lung_semiaxis_min, spec.lung_semiaxis_max);
        sc.lungs.push_back(l);
    }

    const std::size_t max_lesions = 3;
    std::size_t n_lesions =
        spec.allow_empty_lesions ? g.next_below(max_lesions + 1) : 1 + g.next_below(max_lesions);
    for (std::size_t i = 0; i < n_lesions; ++i) {
        const Ellipse& host = sc.lungs[g.next_below(sc.lungs.size())];
        Ellipse e;
        // Center well inside the host so most of the blob stays inside.
        e.cy = host.cy + host.ry * g.uniform(-0.4, 0.4);
        e.cx = host.cx + host.rx * g.uniform(-0.4, 0.4);
        e.cz = host.cz + host.rz * g.uniform(-0.4, 0.4);
        const double r = g.uniform(0.45, 0.80);
        e.ry = host.ry * r;
        e.rx = host.rx * r;
        e.rz = host.rz * r;
        sc.lesions.emplace_back(e, float(g.uniform(double(spec.lesion_hu_min), double(spec.lesion_hu_max))));
    }
    return sc;
}

// Rasterizes the scene; returns true if the lesion mask is nonempty.
bool render(const PhantomSpec& spec, const Scene& sc, std::vector<float>& hu, std::vector<float>& mask,
            bool is3d) {
    const std::size_t s = spec.size;
    const std::size_t depth = is3d ? s : 1;
    hu.assign(s * s * depth, -1000.0f);
    mask.assign(s * s * depth, 0.0f);
    bool any = false;
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            for (std::size_t z = 0; z < depth; ++z) {
                const std::size_t idx = is3d ? (y * s + x) * depth + z : y * s + x;
                const double yy = double(y), xx = double(x), zz = double(z);
                if (!sc.body.contains(yy, xx, zz, is3d)) continue;
                hu[idx] = sc.body_hu;
                const Ellipse* host = nullptr;
                for (const auto& l : sc.lungs) {
                    if (l.contains(yy, xx, zz, is3d)) {
                        host = &l;
                        break;
                    }
                }
                if (!host) continue;
                hu[idx] = sc.lung_hu;
                for (const auto& [e, lesion_hu] : sc.lesions) {
                    if (e.contains(yy, xx, zz, is3d)) {
                        hu[idx] = lesion_hu;
                        mask[idx] = 1.0f;
                        any = true;
                        break;
                    }
                }
            }
        }
    }
    return any;
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec, std::size_t index) {
    if (spec.dims != 2 && spec.dims != 3) throw ShapeError("phantom dims must be 2 or 3");
    if (spec.size < 8) throw ShapeError("phantom size must be >= 8");
    const bool is3d = spec.dims == 3;
    auto g = rng::substream(spec.seed, rng::kTagPhantom, index);

    std::vector<float> hu, mask;
    for (;;) {
        const Scene sc = sample_scene(spec, g);
        const bool any = render(spec, sc, hu, mask, is3d);
        const bool want_empty = spec.allow_empty_lesions && sc.lesions.empty();
        if (any || want_empty) break;
        // Lesion fell entirely outside its lung; redraw from the same stream.
    }

    Phantom p;
    p.volume.dims = is3d ? Shape{spec.size, spec.size, spec.size} : Shape{spec.size, spec.size};
    p.volume.spacing_mm.assign(p.volume.dims.size(), 1.0f);
    p.volume.values = std::move(hu);
    p.lesion_mask = Tensor<float>::from(p.volume.dims, std::move(mask));
    return p;
}

void gen_phantoms(const PhantomSpec& spec, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);

    std::vector<std::size_t> order(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) order[i] = i;
    auto g = rng::substream(spec.seed, rng::kTagSplit);
    rng::shuffle(order, g);
    const std::size_t n_train = std::size_t(std::floor(0.8 * double(spec.count)));
    std::vector<std::string> split(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) split[order[i]] = i < n_train ? "train" : "test";

    io::Manifest seg, cls;
    seg.task = "seg";
    cls.task = "cls";
    char name[64];
    for (std::size_t i = 0; i < spec.count; ++i) {
        const Phantom p = make_phantom(spec, i);
        std::snprintf(name, sizeof name, "phantom_%04zu.isdt", i);
        const std::string vol_name = name;
        std::snprintf(name, sizeof name, "mask_%04zu.isdt", i);
        const std::string mask_name = name;
        io::write_isdt(out_dir / vol_name, Tensor<float>::from(p.volume.dims, p.volume.values));
        io::write_isdt(out_dir / mask_name, p.lesion_mask);

        seg.entries.push_back({vol_name, mask_name, split[i]});
        bool has_lesion = false;
        for (const float v : p.lesion_mask.value()) has_lesion = has_lesion || v != 0.0f;
        cls.entries.push_back({vol_name, has_lesion ? "1" : "0", split[i]});
    }
    io::write_manifest(out_dir / "manifest_seg.isdm", seg);
    io::write_manifest(out_dir / "manifest_cls.isdm", cls);
}

}  // namespace isd::phantom
