import logging
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from model.einstein import (SolverConfig, cone_limit_study, ke_residual, normalize_automorphism,
                            solve_twisted_ke_report, uniqueness_experiment)
from model.errors import ConfigError, LabError, SlopeMismatchError
from model.functionals import epsilon_monotonicity, properness_scan, twister_independence_constants
from model.geodesics import (convexity_audit, epsilon_convergence, epsilon_geodesic, exact_geodesic,
                             geodesic_defect)
from model.radial_model import (RadialWeight, build_grid, fubini_study, football, save_weight,
                                sech2)
from model.spectral import eigenfunction_alignment, lowest_spectrum
from model.twister import conical, no_twister, smooth_background, smoothing_profile

from .reports import Manifest, ReportWriter

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2

AUDIT_COLUMNS = ['s', 'D', 'D2', 'delta_tau', 'k', 'f_weighted', 'E2']


def make_twister(config, grid):
    scale = config.mass_scale
    if config.twister == 'none':
        return no_twister(grid, scale)
    if config.twister == 'background':
        return smooth_background(1.0 - config.beta, grid, scale)
    if config.twister == 'smoothed':
        return smoothing_profile(config.beta, config.eps, grid, scale)
    if config.twister == 'conical':
        return conical(config.beta, grid, scale)
    raise ConfigError(f"unknown twister '{config.twister}'")


def closed_form(name, config, grid, shift=0.0):
    """闭式权函数，质量乘以 mass_scale"""
    if name == 'fubini_study':
        weight = fubini_study(grid, shift)
    elif name == 'football':
        weight = football(config.beta, grid, shift)
    elif name == 'background':
        weight = fubini_study(grid, shift).scaled(config.beta)
    else:
        raise ConfigError(f"'{name}' is not a closed-form weight")
    return weight.scaled(config.mass_scale) if config.mass_scale != 1.0 else weight


def ke_guess(config, grid, shift=0.0):
    """各扭曲下的闭式 KE 解（smoothed 取锥角解作初值）"""
    name = {'none': 'fubini_study', 'background': 'background',
            'smoothed': 'football', 'conical': 'football'}[config.twister]
    return closed_form(name, config, grid, shift)


def is_closed_form_ke(config, start):
    if config.mass_scale != 1.0:
        return False
    return (config.twister, start) in {('none', 'fubini_study'), ('background', 'background'),
                                       ('conical', 'football')}


def sech(y):
    return np.sqrt(sech2(y))


def bump(grid, c, x0):
    """c*sech(x - x0)，两端斜率为零"""
    y = grid.x - x0
    s = sech(y)
    return RadialWeight(grid, c * s, 0.0, 0.0, c * s * (1.0 - 2.0 * s * s))


def perturbation_family(base, count, rng, amplitude=0.3, max_attempts=1000):
    """保持凸性的随机扰动 base + c*sech(x - x0)，不凸则重新抽取"""
    scale = amplitude * float(np.max(base.hessian()))
    family = []
    attempts = 0
    while len(family) < count:
        attempts += 1
        if attempts > max_attempts:
            raise LabError(f"could not draw {count} convex perturbations in {max_attempts} attempts")
        c = float(rng.uniform(-scale, scale))
        x0 = float(rng.uniform(-1.0, 1.0))
        candidate = base + bump(base.grid, c, x0)
        if len(candidate.nonconvex_nodes(strict=True)) == 0:
            family.append(candidate)
    logger.debug(f"扰动族: {count} 个成员, 抽取 {attempts} 次")
    return family


def endpoint(name, start, config, grid, rng):
    if name == 'perturbed':
        return perturbation_family(start, 1, rng)[0]
    if name == 'translated':
        return closed_form(config.start, config, grid, shift=1.0)
    return closed_form(name, config, grid)


class LabRunner:
    """按配置运行一个实验并写出报告"""

    def __init__(self, settings):
        self.settings = settings
        self.audit_config = settings.audit
        self.properness_config = settings.properness
        self.spectral_config = settings.spectral
        self.mapper = map
        self.logger = logging.getLogger(__name__)
        self.handlers = {
            'ke-solve': self._ke_solve,
            'geodesic-audit': self._geodesic_audit,
            'cone-limit': self._cone_limit,
            'uniqueness': self._uniqueness,
            'properness-scan': self._properness_scan,
            'spectrum': self._spectrum,
        }

    def run(self, config):
        """返回退出码：0 全部不变量通过，1 不变量或求解失败，2 配置或斜率错误"""
        start_time = time.time()
        writer = ReportWriter(config.output_dir)
        manifest = Manifest(config.echo())
        self.logger.info(f"开始实验: {config.experiment}, 输出目录 {config.output_dir}")
        executor = ThreadPoolExecutor() if config.parallel else None
        try:
            self.mapper = executor.map if executor else map
            self.handlers[config.experiment](config, writer, manifest)
            failure = manifest.first_failure
            status = EXIT_OK if failure is None else EXIT_INVARIANT
            if failure:
                manifest.error = f"invariant failed: {failure}"
        except (ConfigError, SlopeMismatchError) as e:
            self.logger.error(f"实验配置错误: {e}")
            manifest.error = str(e)
            status = EXIT_CONFIG
        except LabError as e:
            self.logger.error(f"实验失败: {e}")
            manifest.error = str(e)
            status = EXIT_INVARIANT
        except Exception as e:
            self.logger.exception(f"实验异常: {e}")
            manifest.error = f"{type(e).__name__}: {e}"
            status = EXIT_INVARIANT
        finally:
            if executor:
                executor.shutdown()
        wall = time.time() - start_time
        manifest.write(writer.path('manifest.txt'), wall, status, writer.files)
        self.logger.info(f"实验结束: {config.experiment}, 退出码 {status}, 用时 {wall:.1f}s")
        return status

    def _solver(self, config):
        return SolverConfig.from_dict({**self.settings.solver, **config.solver_dict()})

    def _ke_tolerance(self, config):
        return max(1e-9, 10.0 * config.tol)

    def _ke_solve(self, config, writer, manifest):
        grid = build_grid(config.x_max, config.n)
        tw = make_twister(config, grid)
        rng = np.random.default_rng(config.seed)
        guess = ke_guess(config, grid)
        seed = perturbation_family(guess, 1, rng, self.properness_config.get('bump_amplitude', 0.3))[0]
        cfg = self._solver(config)
        solution = solve_twisted_ke_report(tw, seed, cfg)
        phi = solution.weight
        residual = ke_residual(phi, tw)
        manifest.certificate('newton_residual', solution.residual)
        manifest.note(f"twister {tw.tag}, gauge {cfg.gauge.value}, newton iterations {solution.iterations}")
        manifest.certificate('ke_residual', residual)
        manifest.invariant('ke_residual', residual <= self._ke_tolerance(config), f"{residual:.3e}")
        if config.twister != 'smoothed' and config.mass_scale == 1.0:
            reference = normalize_automorphism(guess) if tw.is_degenerate else guess
            distance = float(np.max(np.abs(phi.samples - reference.samples)))
            manifest.certificate('closed_form_distance', distance)
            manifest.invariant('closed_form_recovered', distance <= 1e-7, f"{distance:.3e}")
        save_weight(phi, writer.path('ke_solution.txt'))
        writer.files.append('ke_solution.txt')

    def _audit_rows(self, rows):
        return [[r.s, r.D, r.D_second, r.delta_tau, r.k_term, r.f_weighted, r.E_second] for r in rows]

    def _check_audit(self, rows, manifest, label):
        slack = self.audit_config.get('convexity_slack', 1e-6)
        tol = self.audit_config.get('decomposition_tol', 1e-4)
        interior = rows[1:-1]
        min_d2 = min(r.D_second for r in interior)
        gap = max(abs(r.D_second - r.assembled) for r in interior)
        manifest.certificate(f'{label}_min_D2', min_d2)
        manifest.certificate(f'{label}_decomposition_gap', gap)
        manifest.invariant(f'{label}_convexity', min_d2 >= -slack, f"{min_d2:.3e}")
        manifest.invariant(f'{label}_decomposition', gap <= tol, f"{gap:.3e}")

    def _geodesic_audit(self, config, writer, manifest):
        grid = build_grid(config.x_max, config.n)
        tw = make_twister(config, grid)
        rng = np.random.default_rng(config.seed)
        phi0 = closed_form(config.start, config, grid)
        phi1 = endpoint(config.end, phi0, config, grid, rng)

        path = exact_geodesic(phi0, phi1, config.m)
        defects = geodesic_defect(path, tw=tw)
        rows = convexity_audit(path, tw, defects)
        manifest.certificate('geodesic_defect', defects.sup())
        manifest.invariant('geodesic_defect', defects.sup() <= self.audit_config.get('defect_tol', 5e-4),
                           f"{defects.sup():.3e}")
        self._check_audit(rows, manifest, 'exact')
        body = self._audit_rows(rows)
        comments = []

        if config.eps:
            cfg = self._solver(config)
            cfg.tol = self.audit_config.get('eps_tol', 1e-8)
            eps_path = epsilon_geodesic(phi0, phi1, config.eps, cfg, config.m)
            eps_defects = geodesic_defect(eps_path, config.eps, tw, rho=phi0.hessian())
            eps_rows = convexity_audit(eps_path, tw, eps_defects)
            manifest.certificate('eps_geodesic_residual', eps_path.residual)
            low = eps_defects.identity_min / config.eps
            high = eps_defects.identity_max / config.eps
            manifest.certificate('eps_identity_min', low)
            manifest.certificate('eps_identity_max', high)
            manifest.invariant('eps_identity', 0.99 <= low and high <= 1.01, f"[{low:.4f}, {high:.4f}]")
            self._check_audit(eps_rows, manifest, 'eps')
            comments.append(f"eps={config.eps!r} rows follow")
            body += self._audit_rows(eps_rows)

        if len(config.eps_list) >= 2:
            cfg = self._solver(config)
            cfg.tol = self.audit_config.get('eps_tol', 1e-8)
            study = epsilon_convergence(phi0, phi1, config.eps_list, cfg, tw, config.m)
            for row in study['rows']:
                comments.append(f"eps={row['eps']!r},dist={row['dist']!r},C={row['C']!r}")
                manifest.certificate(f"eps_residual[{row['eps']:g}]", row['residual'])
            for ratio in study['ratios']:
                manifest.certificate('eps_halving_ratio', ratio)
            manifest.invariant('eps_halving_ratio', all(1.6 <= r <= 2.4 for r in study['ratios']),
                               ', '.join(f"{r:.3f}" for r in study['ratios']))
            manifest.invariant('eps_budget', study['budget_ok'], f"C={study['C_observed']:.4g}")

        # eps 行跟在精确测地线行之后，注释说明分段
        writer.write_csv('audit.csv', AUDIT_COLUMNS, body, comments)

    def _cone_limit(self, config, writer, manifest):
        grid = build_grid(config.x_max, config.n)
        study = cone_limit_study(config.beta, config.eps_list, config.window, self._solver(config),
                                 grid, config.mass_scale)
        rows = []
        for row in study['rows']:
            rows.append([row['eps'], row['dist'], row['mass'], row['F'], row['D'], row['residual']])
            manifest.certificate(f"cone_residual[{row['eps']:g}]", row['residual'])
        manifest.invariant('cone_distance_decreasing', study['decreasing'],
                           ', '.join(f"{r['dist']:.3e}" for r in study['rows']))
        writer.write_csv('cone_limit.csv', ['eps', 'dist', 'mass', 'F', 'D', 'residual'], rows)

    def _uniqueness(self, config, writer, manifest):
        grid = build_grid(config.x_max, config.n)
        tw = make_twister(config, grid)
        rng = np.random.default_rng(config.seed)
        guess = ke_guess(config, grid)
        seeds = perturbation_family(guess, 2, rng, self.properness_config.get('bump_amplitude', 0.3))
        labels = ['bump0', 'bump1']
        if tw.is_degenerate:
            seeds.append(ke_guess(config, grid, shift=1.5))
            labels.append('translated')
            manifest.note(f"twister {tw.tag} admits translations, distances compared after centering")
        report = uniqueness_experiment(tw, seeds, self._solver(config), labels, mapper=self.mapper)
        for label, residual in zip(labels, report.residuals):
            manifest.certificate(f'residual[{label}]', residual)
        manifest.invariant('uniqueness', report.verdict == 'unique', report.verdict)
        payload = report.as_dict()
        payload['twister'] = tw.tag
        writer.write_json('uniqueness.json', payload)

    def _properness_family(self, config, reference, grid, rng):
        size = config.family_size
        if config.family == 'translation':
            shifts = np.linspace(0.0, self.properness_config.get('max_translation', 6.0), size)
            return [ke_guess(config, grid, shift=float(t)) for t in shifts]
        direction = perturbation_family(reference, 1, rng, self.properness_config.get('bump_amplitude', 0.3))[0]
        delta = direction.samples - reference.samples
        curvature = direction.hessian() - reference.hessian()
        return [RadialWeight(grid, reference.samples + lam * delta, reference.slope_minus, reference.slope_plus,
                             reference.hessian() + lam * curvature)
                for lam in np.linspace(0.0, 1.0, size)]

    def _properness_scan(self, config, writer, manifest):
        grid = build_grid(config.x_max, config.n)
        tw = make_twister(config, grid)
        rng = np.random.default_rng(config.seed)
        reference = ke_guess(config, grid)
        family = self._properness_family(config, reference, grid, rng)
        report = properness_scan(family, reference, tw)
        comments = []

        if config.twister in ('background', 'smoothed'):
            others = [smooth_background(1.0 - config.beta, grid, config.mass_scale),
                      smoothing_profile(config.beta, config.eps or 1e-2, grid, config.mass_scale)]
            for row in twister_independence_constants(family, reference, others):
                comments.append(f"C'({row['first']},{row['second']})={row['C']!r}")
                manifest.certificate(f"twister_gap[{row['first']},{row['second']}]", row['C'])

        if config.beta is not None and config.eps_list and config.twister in ('smoothed', 'conical'):
            mono = epsilon_monotonicity(family, reference, config.beta, config.eps_list)
            manifest.invariant('eps_monotone', mono['monotone'])
            manifest.invariant('cone_minimum', mono['cone_minimum'])
            comments.append(f"eps_monotone={mono['monotone']},cone_minimum={mono['cone_minimum']}")

        comments.append(f"verdict={report.verdict},a={report.a!r},b={report.b!r}")
        rows = [[i, J, D] for i, (J, D) in enumerate(zip(report.J, report.D))]
        writer.write_csv('properness.csv', ['member', 'J', 'D'], rows, comments)

    def _spectrum(self, config, writer, manifest):
        grid = build_grid(config.x_max, config.n)
        tw = make_twister(config, grid)
        count = config.count
        spectral = {'max_iter': self.spectral_config.get('max_iter', 500),
                    'tol': self.spectral_config.get('tol', 1e-13)}
        start = closed_form(config.start, config, grid)
        tau = tw.total_weight(start)
        pairs = lowest_spectrum(tau, count, **spectral)
        comments = []
        if is_closed_form_ke(config, config.start):
            self._check_futaki(pairs[0], tau, manifest, 'closed_form')

        if config.beta is not None:
            rng = np.random.default_rng(config.seed)
            seed = perturbation_family(ke_guess(config, grid), 1, rng)[0]
            solution = solve_twisted_ke_report(tw, seed, self._solver(config))
            manifest.certificate('ke_residual', ke_residual(solution.weight, tw))
            ke_pair = lowest_spectrum(tw.total_weight(solution.weight), 1, **spectral)[0]
            self._check_futaki(ke_pair, tw.total_weight(solution.weight), manifest, 'ke')
            comments.append(f"ke_lambda1={ke_pair.eigenvalue!r}")

        rows = [[i + 1, p.eigenvalue, p.rayleigh_residual] for i, p in enumerate(pairs)]
        for i, p in enumerate(pairs):
            manifest.certificate(f'rayleigh_residual[{i + 1}]', p.rayleigh_residual)
        writer.write_csv('spectrum.csv', ['index', 'lambda', 'rayleigh_residual'], rows, comments)

    def _check_futaki(self, pair, tau, manifest, label):
        gap = abs(pair.eigenvalue - 1.0)
        alignment = eigenfunction_alignment(pair.u, tau)
        manifest.certificate(f'{label}_lambda1', pair.eigenvalue)
        manifest.certificate(f'{label}_eigenfunction_alignment', alignment)
        manifest.invariant(f'{label}_lambda1', gap <= 1e-5, f"{pair.eigenvalue:.10f}")
        manifest.invariant(f'{label}_eigenfunction', alignment <= 1e-3, f"{alignment:.3e}")
