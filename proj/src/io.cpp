// io.cpp - part of dtreg. Binary container read/write, phantoms, JSON config.

#include "dtreg/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "json.hpp"

namespace dtreg {

using nlohmann::json;

namespace {

void put_u32_le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_f64_le(std::string& out, double d) {
    const uint64_t bits = std::bit_cast<uint64_t>(d);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_f64_le(const unsigned char* p) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(p[b]) << (8 * b);
    return std::bit_cast<double>(bits);
}

void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

struct Container {
    json header;
    const unsigned char* payload;
    size_t payload_len;
};

Container parse_container(const std::string& bytes, const char* expected_magic) {
    if (bytes.size() < 4) throw TruncatedPayload("file shorter than the header length field");
    uint32_t hlen = 0;
    for (int b = 0; b < 4; ++b)
        hlen |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[static_cast<size_t>(b)]))
                << (8 * b);
    if (bytes.size() < 4 + static_cast<size_t>(hlen))
        throw TruncatedPayload("file shorter than the declared header");
    json header;
    try {
        header = json::parse(bytes.begin() + 4, bytes.begin() + 4 + hlen);
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed header JSON: ") + e.what());
    }
    if (!header.contains("magic") || !header["magic"].is_string() ||
        header["magic"].get<std::string>() != expected_magic)
        throw BadMagic(std::string("expected magic \"") + expected_magic + "\"");
    if (!header.contains("version") || header["version"].get<int>() != 1)
        throw IoError("unsupported format version");
    Container c;
    c.header = std::move(header);
    c.payload = reinterpret_cast<const unsigned char*>(bytes.data()) + 4 + hlen;
    c.payload_len = bytes.size() - 4 - hlen;
    return c;
}

GridSpec grid_from_header(const json& h, bool read_time_axis) {
    GridSpec g;
    const auto dims = h.at("dims");
    g.nx = dims.at(0).get<int>();
    g.ny = dims.at(1).get<int>();
    g.nz = dims.at(2).get<int>();
    const auto sp = h.at("spacing");
    g.hx = sp.at(0).get<double>();
    g.hy = sp.at(1).get<double>();
    g.hz = sp.at(2).get<double>();
    if (read_time_axis) {
        if (h.contains("tau")) g.tau = h.at("tau").get<double>();
        if (h.contains("nt")) g.nt = h.at("nt").get<int>();
    } else if (h.contains("tau")) {
        g.tau = h.at("tau").get<double>();
    }
    g.validate();
    return g;
}

void check_payload(const Container& c, size_t expected_doubles) {
    if (c.payload_len < expected_doubles * 8)
        throw TruncatedPayload("payload holds " + std::to_string(c.payload_len / 8) +
                               " values, expected " + std::to_string(expected_doubles));
    if (c.payload_len != expected_doubles * 8)
        throw IoError("payload longer than the header promises");
}

}  // namespace

void write_tensor_image(const TensorImage& img, const std::string& path) {
    const GridSpec& g = img.grid;
    json h = {{"magic", "DTIR"},     {"version", 1},
              {"dims", {g.nx, g.ny, g.nz}}, {"spacing", {g.hx, g.hy, g.hz}},
              {"components", 6},     {"dtype", "f64le"},
              {"layout", "x-fastest"}};
    std::string bytes;
    const std::string hs = h.dump();
    put_u32_le(bytes, static_cast<uint32_t>(hs.size()));
    bytes += hs;
    bytes.reserve(bytes.size() + img.voxels.size() * 48);
    for (const Spd3& s : img.voxels)
        for (double c : s.components()) put_f64_le(bytes, c);
    atomic_write(path, bytes);
}

TensorImage read_tensor_image(const std::string& path) {
    const std::string bytes = read_all(path);
    const Container c = parse_container(bytes, "DTIR");
    if (c.header.at("components").get<int>() != 6) throw IoError("DTIR requires 6 components");
    if (c.header.at("dtype").get<std::string>() != "f64le") throw IoError("unsupported dtype");
    GridSpec g = grid_from_header(c.header, false);
    check_payload(c, g.voxel_count() * 6);

    TensorImage img(g);
    const unsigned char* p = c.payload;
    for (size_t idx = 0; idx < img.voxels.size(); ++idx) {
        std::array<double, 6> comp{};
        for (int q = 0; q < 6; ++q) comp[static_cast<size_t>(q)] = get_f64_le(p + 8 * q);
        p += 48;
        img.voxels[idx] = Spd3::from_components(comp);
    }
    // SPD validation with the eigenvalue floor; report the offending voxel.
    for (size_t idx = 0; idx < img.voxels.size(); ++idx) {
        const Spd3& s = img.voxels[idx];
        bool ok = true;
        for (double v : s.components())
            if (!std::isfinite(v)) ok = false;
        if (ok) {
            const double tr = s.trace();
            if (!(tr > 0.0)) {
                ok = false;
            } else {
                const EigenTriple e = sym_eig(s.to_mat());
                ok = e.lambda[2] >= eps_spd_floor(tr);
            }
        }
        if (!ok) throw NotSpd(idx);
    }
    return img;
}

void write_velocity_field(const VelocityField& v, const std::string& path) {
    const GridSpec& g = v.grid;
    json h = {{"magic", "VELF"},     {"version", 1},
              {"dims", {g.nx, g.ny, g.nz}}, {"spacing", {g.hx, g.hy, g.hz}},
              {"tau", g.tau},        {"nt", g.nt},
              {"components", 3},     {"dtype", "f64le"}};
    std::string bytes;
    const std::string hs = h.dump();
    put_u32_le(bytes, static_cast<uint32_t>(hs.size()));
    bytes += hs;
    bytes.reserve(bytes.size() + v.data.size() * 8);
    for (double d : v.data) put_f64_le(bytes, d);
    atomic_write(path, bytes);
}

VelocityField read_velocity_field(const std::string& path) {
    const std::string bytes = read_all(path);
    const Container c = parse_container(bytes, "VELF");
    if (c.header.at("components").get<int>() != 3) throw IoError("VELF requires 3 components");
    if (c.header.at("dtype").get<std::string>() != "f64le") throw IoError("unsupported dtype");
    GridSpec g = grid_from_header(c.header, true);
    if (!c.header.contains("tau") || !c.header.contains("nt"))
        throw IoError("VELF header missing tau or nt");
    check_payload(c, static_cast<size_t>(g.nt) * g.voxel_count() * 3);

    VelocityField v(g);
    const unsigned char* p = c.payload;
    for (size_t q = 0; q < v.data.size(); ++q) v.data[q] = get_f64_le(p + 8 * q);
    for (double d : v.data)
        if (!std::isfinite(d)) throw IoError("velocity payload contains non-finite values");
    if (!v.boundary_is_zero()) throw IoError("velocity field is nonzero on the boundary layer");
    return v;
}

void write_deformation(const FlowResult& fr, const std::string& path) {
    const GridSpec& g = fr.grid;
    json h = {{"magic", "DEFF"},     {"version", 1},
              {"dims", {g.nx, g.ny, g.nz}}, {"spacing", {g.hx, g.hy, g.hz}},
              {"tau", g.tau},        {"nt", 1},
              {"components", 12},    {"dtype", "f64le"},
              {"t_from", fr.t_from}, {"t_to", fr.t_to}};
    std::string bytes;
    const std::string hs = h.dump();
    put_u32_le(bytes, static_cast<uint32_t>(hs.size()));
    bytes += hs;
    bytes.reserve(bytes.size() + fr.endpoints.size() * 96);
    for (size_t idx = 0; idx < fr.endpoints.size(); ++idx) {
        const Vec3& e = fr.endpoints[idx];
        put_f64_le(bytes, e.x);
        put_f64_le(bytes, e.y);
        put_f64_le(bytes, e.z);
        for (double m : fr.jacobians[idx].m) put_f64_le(bytes, m);
    }
    atomic_write(path, bytes);
}

FlowResult read_deformation(const std::string& path) {
    const std::string bytes = read_all(path);
    const Container c = parse_container(bytes, "DEFF");
    if (c.header.at("components").get<int>() != 12) throw IoError("DEFF requires 12 components");
    GridSpec g = grid_from_header(c.header, false);
    check_payload(c, g.voxel_count() * 12);

    FlowResult fr;
    fr.grid = g;
    fr.t_from = c.header.value("t_from", 0.0);
    fr.t_to = c.header.value("t_to", g.tau);
    const size_t n = g.voxel_count();
    fr.endpoints.resize(n);
    fr.jacobians.resize(n);
    fr.det_diag.resize(n);
    const unsigned char* p = c.payload;
    for (size_t idx = 0; idx < n; ++idx) {
        fr.endpoints[idx] = {get_f64_le(p), get_f64_le(p + 8), get_f64_le(p + 16)};
        p += 24;
        for (int q = 0; q < 9; ++q) fr.jacobians[idx].m[static_cast<size_t>(q)] = get_f64_le(p + 8 * q);
        p += 72;
        const double det = det3(fr.jacobians[idx]);
        fr.det_diag[idx] = {det, det};
    }
    return fr;
}

PhantomKind phantom_kind_from_string(const std::string& s) {
    if (s == "uniform") return PhantomKind::Uniform;
    if (s == "two-compartment") return PhantomKind::TwoCompartment;
    if (s == "fiber-bundle") return PhantomKind::FiberBundle;
    throw BadParams("unknown phantom kind: " + s);
}

namespace {

Spd3 diag_tensor(const Vec3& eigs, double max_aniso) {
    if (!(eigs.x > 0.0 && eigs.y > 0.0 && eigs.z > 0.0))
        throw BadParams("phantom tensor eigenvalues must be positive");
    const double hi = std::max({eigs.x, eigs.y, eigs.z});
    const double lo = std::min({eigs.x, eigs.y, eigs.z});
    if (hi / lo > max_aniso) throw BadParams("phantom tensor anisotropy exceeds max_aniso");
    Spd3 s;
    s.xx = eigs.x;
    s.yy = eigs.y;
    s.zz = eigs.z;
    s.xy = s.xz = s.yz = 0.0;
    return s;
}

// Principal eigenvalue `para` along `axis`, `perp` across it.
Spd3 axial_tensor(int axis, double para, double perp, double max_aniso) {
    Vec3 eigs{perp, perp, perp};
    eigs[axis] = para;
    return diag_tensor(eigs, max_aniso);
}

}  // namespace

TensorImage make_phantom(PhantomKind kind, const GridSpec& grid, const PhantomParams& params) {
    grid.validate();
    if (params.split_axis < 0 || params.split_axis > 2 || params.fiber_axis < 0 ||
        params.fiber_axis > 2)
        throw BadParams("phantom axis must be 0, 1 or 2");
    if (!(params.split_frac > 0.0 && params.split_frac < 1.0))
        throw BadParams("phantom split_frac must lie strictly inside (0,1)");
    if (!(params.fiber_radius_frac > 0.0 && params.fiber_radius_frac < 1.0))
        throw BadParams("phantom fiber_radius_frac must lie strictly inside (0,1)");

    TensorImage img(grid);
    const Spd3 base = diag_tensor(params.base_eigs, params.max_aniso);

    switch (kind) {
        case PhantomKind::Uniform: {
            for (Spd3& s : img.voxels) s = base;
            break;
        }
        case PhantomKind::TwoCompartment: {
            const Spd3 alt = diag_tensor(params.alt_eigs, params.max_aniso);
            const int n[3] = {grid.nx, grid.ny, grid.nz};
            const int split = static_cast<int>(params.split_frac * n[params.split_axis]);
            for (int k = 0; k < grid.nz; ++k)
                for (int j = 0; j < grid.ny; ++j)
                    for (int i = 0; i < grid.nx; ++i) {
                        const int a = params.split_axis == 0 ? i : (params.split_axis == 1 ? j : k);
                        img.at(i, j, k) = a < split ? base : alt;
                    }
            break;
        }
        case PhantomKind::FiberBundle: {
            const Spd3 fiber = axial_tensor(params.fiber_axis, params.fiber_parallel,
                                            params.fiber_perp, params.max_aniso);
            const int u = (params.fiber_axis + 1) % 3;
            const int w = (params.fiber_axis + 2) % 3;
            const double n_u = (params.fiber_axis == 0 ? grid.ny : (params.fiber_axis == 1 ? grid.nz : grid.nx)) - 1.0;
            const double n_w = (params.fiber_axis == 0 ? grid.nz : (params.fiber_axis == 1 ? grid.nx : grid.ny)) - 1.0;
            const double r = params.fiber_radius_frac;
            for (int k = 0; k < grid.nz; ++k)
                for (int j = 0; j < grid.ny; ++j)
                    for (int i = 0; i < grid.nx; ++i) {
                        const int ijk[3] = {i, j, k};
                        const double cu = ijk[u] / n_u - 0.5;
                        const double cw = ijk[w] / n_w - 0.5;
                        img.at(i, j, k) = (cu * cu + cw * cw <= r * r) ? fiber : base;
                    }
            break;
        }
    }
    return img;
}

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) ok = true;
        if (!ok) throw BadParams("config: unknown key \"" + it.key() + "\" in " + where);
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw BadParams(std::string("config: malformed JSON: ") + e.what());
    }
    reject_unknown_keys(j,
                        {"tau", "nt", "threads", "nsteps_flow", "modes_per_axis", "max_iter",
                         "armijo", "grad_eps", "stop_tol_rel", "data_weight"},
                        "top level");

    RunConfig rc;
    rc.tau = j.value("tau", rc.tau);
    rc.nt = j.value("nt", rc.nt);
    rc.threads = j.value("threads", rc.threads);
    ObjectiveConfig& oc = rc.objective;
    oc.nsteps_flow = j.value("nsteps_flow", oc.nsteps_flow);
    oc.modes_per_axis = j.value("modes_per_axis", oc.modes_per_axis);
    oc.max_iter = j.value("max_iter", oc.max_iter);
    oc.grad_eps = j.value("grad_eps", oc.grad_eps);
    oc.stop_tol_rel = j.value("stop_tol_rel", oc.stop_tol_rel);
    oc.data_weight = j.value("data_weight", oc.data_weight);
    if (j.contains("armijo")) {
        const json& a = j["armijo"];
        reject_unknown_keys(a, {"c1", "backtrack", "initial_step"}, "armijo");
        oc.armijo.c1 = a.value("c1", oc.armijo.c1);
        oc.armijo.backtrack = a.value("backtrack", oc.armijo.backtrack);
        oc.armijo.initial_step = a.value("initial_step", oc.armijo.initial_step);
    }
    if (!(rc.tau > 0.0)) throw BadParams("config: tau must be positive");
    if (rc.nt < 2) throw BadParams("config: nt must be at least 2");
    if (j.contains("threads") && rc.threads < 0)
        throw BadParams("config: threads must be nonnegative");
    return rc;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_all(path)); }

std::string report_to_json(const ObjectiveReport& rep) {
    json t = json::array();
    for (const IterationRecord& r : rep.trace)
        t.push_back({{"iter", r.iter},
                     {"total", r.total},
                     {"step", r.step},
                     {"grad_norm", r.grad_norm},
                     {"min_det", r.min_det}});
    json j = {{"reg", rep.reg},
              {"data", rep.data},
              {"total", rep.total},
              {"converged", rep.converged},
              {"iterations", rep.iterations},
              {"trace", t},
              {"displacement_lipschitz", rep.displacement_probe.lipschitz},
              {"displacement_holder", rep.displacement_probe.holder}};
    return j.dump(2) + "\n";
}

std::string det_report_to_json(const DetIdentityReport& rep, int nsteps) {
    json j = {{"max_rel_error", rep.max_rel_error},
              {"mean_rel_error", rep.mean_rel_error},
              {"min_det", rep.min_det},
              {"nsteps", nsteps}};
    return j.dump(2) + "\n";
}

}  // namespace dtreg
